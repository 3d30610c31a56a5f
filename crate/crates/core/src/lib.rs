//! Stablecoin crowdfunding engine: ledger, compliance gate, campaign escrow,
//! tokenized cap tables and a secondary market, all recorded in a
//! tamper-evident event log.

pub mod amount;
pub mod bundled;
pub mod campaign;
pub mod compliance;
pub mod engine;
pub mod event;
pub mod fee;
pub mod generate;
pub mod ids;
pub mod ledger;
pub mod market;
pub mod scenario;
pub mod tokenization;

pub use amount::{Amount, AmountError, Bps};
pub use engine::{Engine, EngineError, NewOrder, Placement};
pub use scenario::{run_scenario, RunOptions, RunOutput, Scenario, ScenarioError};
pub use ids::{AccountId, CampaignId, Timestamp};
