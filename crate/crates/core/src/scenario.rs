//! Scenario files: a JSON document of configuration plus timestamped
//! commands, executed against a fresh [`Engine`].
//!
//! A command whose preconditions fail is not an error of the run. It is
//! recorded as a `REJECT` event and the run continues. Only a document
//! that cannot be parsed, goes back in time, or references an id before
//! any command defines it is a [`ScenarioError::MalformedScenario`].

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::{Amount, Bps};
use crate::campaign::CampaignParams;
use crate::compliance::{ComplianceReport, Jurisdiction, JurisdictionRule, KycStatus, RulePolicy};
use crate::engine::{Engine, EngineError, InvariantViolation, NewOrder};
use crate::event::{ChainVerdict, EventKind};
use crate::fee::{fee_comparison, FeeComparisonReport, FiatFeeLine, DEFAULT_FRAMEWORK_BPS, DEFAULT_TRADITIONAL_BPS};
use crate::ids::{AccountId, CampaignId, Timestamp};
use crate::ledger::FiatRate;
use crate::market::{OrderId, Side};
use crate::tokenization::TokenKind;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario: {0}")]
    MalformedScenario(String),
    #[error("after command {index}: {violation}")]
    Invariant { index: usize, violation: InvariantViolation },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeeModel {
    #[serde(default = "default_traditional")]
    pub traditional_bps: Bps,
    #[serde(default = "default_framework")]
    pub framework_bps: Bps,
}

fn default_traditional() -> Bps {
    Bps::new(DEFAULT_TRADITIONAL_BPS).expect("preset in range")
}

fn default_framework() -> Bps {
    Bps::new(DEFAULT_FRAMEWORK_BPS).expect("preset in range")
}

impl Default for FeeModel {
    fn default() -> Self {
        FeeModel {
            traditional_bps: default_traditional(),
            framework_bps: default_framework(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Feeds scenario generators only; the engine never sees it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fee_model: FeeModel,
    #[serde(default)]
    pub fiat_rates: Vec<FiatRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_rule: Option<RulePolicy>,
    #[serde(default)]
    pub jurisdiction_rules: Vec<JurisdictionRule>,
    #[serde(default)]
    pub commands: Vec<Command>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Command {
    pub at: Timestamp,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    CreateAccount {
        id: String,
    },
    Mint {
        to: AccountId,
        amount: Amount,
    },
    Transfer {
        from: AccountId,
        to: AccountId,
        amount: Amount,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fee_bps: Option<Bps>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fee_sink: Option<AccountId>,
    },
    SetKyc {
        account: AccountId,
        status: KycStatus,
        jurisdiction: Jurisdiction,
    },
    CreateCampaign {
        campaign: CampaignId,
        owner: AccountId,
        goal: Amount,
        deadline: Timestamp,
        /// Release share of each milestone, in basis points.
        milestones: Vec<Bps>,
        validators: Vec<AccountId>,
        required_approvals: usize,
        fee_sink: AccountId,
        /// Defaults to the fee model's framework rate.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fee_bps: Option<Bps>,
    },
    DefineToken {
        campaign: CampaignId,
        kind: TokenKind,
        total_supply: u64,
    },
    Contribute {
        campaign: CampaignId,
        contributor: AccountId,
        amount: Amount,
    },
    Finalize {
        campaign: CampaignId,
    },
    Refund {
        campaign: CampaignId,
        contributor: AccountId,
    },
    ApproveMilestone {
        campaign: CampaignId,
        milestone: usize,
        validator: AccountId,
    },
    Disburse {
        campaign: CampaignId,
        milestone: usize,
    },
    PlaceOrder {
        campaign: CampaignId,
        trader: AccountId,
        side: Side,
        quantity: u64,
        limit_price: Amount,
    },
    CancelOrder {
        order_id: OrderId,
        trader: AccountId,
    },
    GenerateReport {
        from: Timestamp,
        to: Timestamp,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::CreateAccount { .. } => "create_account",
            Action::Mint { .. } => "mint",
            Action::Transfer { .. } => "transfer",
            Action::SetKyc { .. } => "set_kyc",
            Action::CreateCampaign { .. } => "create_campaign",
            Action::DefineToken { .. } => "define_token",
            Action::Contribute { .. } => "contribute",
            Action::Finalize { .. } => "finalize",
            Action::Refund { .. } => "refund",
            Action::ApproveMilestone { .. } => "approve_milestone",
            Action::Disburse { .. } => "disburse",
            Action::PlaceOrder { .. } => "place_order",
            Action::CancelOrder { .. } => "cancel_order",
            Action::GenerateReport { .. } => "generate_report",
        }
    }

    fn accounts(&self) -> Vec<&AccountId> {
        match self {
            Action::CreateAccount { .. } | Action::Finalize { .. } | Action::Disburse { .. } => vec![],
            Action::DefineToken { .. } | Action::GenerateReport { .. } => vec![],
            Action::Mint { to, .. } => vec![to],
            Action::Transfer { from, to, fee_sink, .. } => {
                let mut ids = vec![from, to];
                ids.extend(fee_sink);
                ids
            }
            Action::SetKyc { account, .. } => vec![account],
            Action::CreateCampaign {
                owner,
                validators,
                fee_sink,
                ..
            } => {
                let mut ids = vec![owner, fee_sink];
                ids.extend(validators);
                ids
            }
            Action::Contribute { contributor, .. } | Action::Refund { contributor, .. } => vec![contributor],
            Action::ApproveMilestone { validator, .. } => vec![validator],
            Action::PlaceOrder { trader, .. } | Action::CancelOrder { trader, .. } => vec![trader],
        }
    }

    fn campaign(&self) -> Option<&CampaignId> {
        match self {
            Action::DefineToken { campaign, .. }
            | Action::Contribute { campaign, .. }
            | Action::Finalize { campaign }
            | Action::Refund { campaign, .. }
            | Action::ApproveMilestone { campaign, .. }
            | Action::Disburse { campaign, .. }
            | Action::PlaceOrder { campaign, .. } => Some(campaign),
            _ => None,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| ScenarioError::MalformedScenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes") + "\n"
    }

    /// Static checks that need no engine: ordering and definition before use.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let malformed = |msg: String| Err(ScenarioError::MalformedScenario(msg));
        for rate in &self.fiat_rates {
            if !rate.is_valid() {
                return malformed(format!("invalid fiat rate {rate:?}"));
            }
        }
        let mut accounts = BTreeSet::new();
        let mut campaigns = BTreeSet::new();
        let mut last = 0;
        for (i, command) in self.commands.iter().enumerate() {
            if command.at < last {
                return malformed(format!("command {i} at {} precedes {last}", command.at));
            }
            last = command.at;
            for account in command.action.accounts() {
                if !accounts.contains(account.as_str()) {
                    return malformed(format!("command {i} references undefined account {account}"));
                }
            }
            if let Some(campaign) = command.action.campaign() {
                if !campaigns.contains(campaign) {
                    return malformed(format!("command {i} references undefined campaign {campaign}"));
                }
            }
            match &command.action {
                Action::CreateAccount { id } => {
                    accounts.insert(id.as_str());
                }
                Action::CreateCampaign { campaign, .. } => {
                    campaigns.insert(campaign.clone());
                }
                Action::Transfer {
                    fee_bps: Some(bps),
                    fee_sink: None,
                    ..
                } if bps.value() > 0 => {
                    return malformed(format!("command {i} charges a fee without a fee_sink"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommandOutcome {
    pub index: usize,
    pub at: Timestamp,
    pub action: &'static str,
    /// Error code of a rejected command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

/// Fees the scenario's contributions would have paid under each model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioFeeReport {
    pub scenario: String,
    pub comparison: FeeComparisonReport,
    pub fiat: Vec<FiatFeeLine>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub engine: Engine,
    pub outcomes: Vec<CommandOutcome>,
    pub reports: Vec<ComplianceReport>,
    pub fee_report: ScenarioFeeReport,
}

impl RunOutput {
    pub fn events_jsonl(&self) -> String {
        self.engine.log().to_jsonl()
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string_pretty(&self.engine.snapshot()).expect("snapshot serializes") + "\n"
    }

    pub fn captable_csv(&self) -> String {
        self.engine.captable_csv()
    }

    pub fn trades_jsonl(&self) -> String {
        self.engine.market().trades_jsonl()
    }

    pub fn fee_report_json(&self) -> String {
        serde_json::to_string_pretty(&self.fee_report).expect("fee report serializes") + "\n"
    }

    pub fn rejections(&self) -> usize {
        self.outcomes.iter().filter(|o| o.rejected.is_some()).count()
    }

    /// Writes every output file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("events.jsonl"), self.events_jsonl())?;
        fs::write(dir.join("snapshot.json"), self.snapshot_json())?;
        fs::write(dir.join("captable.csv"), self.captable_csv())?;
        fs::write(dir.join("trades.jsonl"), self.trades_jsonl())?;
        fs::write(dir.join("fee_report.json"), self.fee_report_json())?;
        for (i, report) in self.reports.iter().enumerate() {
            fs::write(dir.join(format!("report-{i}.json")), report.to_json())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Check every invariant after every command, and that rejected
    /// commands leave the state untouched.
    pub verify: bool,
}

pub fn run_scenario(scenario: &Scenario, options: RunOptions) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;
    let mut engine = Engine::new();
    if let Some(policy) = scenario.default_rule {
        engine.set_default_rule(policy);
    }
    for rule in &scenario.jurisdiction_rules {
        engine.set_jurisdiction_rule(rule);
    }

    let mut outcomes = Vec::with_capacity(scenario.commands.len());
    let mut reports = Vec::new();
    for (index, command) in scenario.commands.iter().enumerate() {
        engine
            .advance_to(command.at)
            .map_err(|e| ScenarioError::MalformedScenario(e.to_string()))?;
        let before = options.verify.then(|| engine.state_hash());
        let rejected = execute(&mut engine, scenario.fee_model, &command.action, &mut reports);
        if rejected.is_some() && before.is_some_and(|h| h != engine.state_hash()) {
            return Err(ScenarioError::Invariant {
                index,
                violation: InvariantViolation(format!("rejected {} changed state", command.action.name())),
            });
        }
        if options.verify {
            check_all(&engine).map_err(|violation| ScenarioError::Invariant { index, violation })?;
        }
        outcomes.push(CommandOutcome {
            index,
            at: command.at,
            action: command.action.name(),
            rejected,
        });
    }
    check_all(&engine).map_err(|violation| ScenarioError::Invariant {
        index: scenario.commands.len(),
        violation,
    })?;

    let fee_report = scenario_fee_report(scenario, &engine);
    Ok(RunOutput {
        engine,
        outcomes,
        reports,
        fee_report,
    })
}

fn check_all(engine: &Engine) -> Result<(), InvariantViolation> {
    if let ChainVerdict::BadAt { seq } = engine.log().verify() {
        return Err(InvariantViolation(format!("event chain breaks at {seq}")));
    }
    engine.check_invariants()
}

/// Applies one action; a failure is logged as a `REJECT` event and its
/// error code returned.
pub(crate) fn execute(
    engine: &mut Engine,
    fee_model: FeeModel,
    action: &Action,
    reports: &mut Vec<ComplianceReport>,
) -> Option<String> {
    match dispatch(engine, fee_model, action, reports) {
        Ok(()) => None,
        Err(error) => {
            engine.record_rejection(action.name(), &error);
            Some(error.code())
        }
    }
}

fn dispatch(
    engine: &mut Engine,
    fee_model: FeeModel,
    action: &Action,
    reports: &mut Vec<ComplianceReport>,
) -> Result<(), EngineError> {
    match action.clone() {
        Action::CreateAccount { id } => engine.create_account(&id).map(drop),
        Action::Mint { to, amount } => engine.mint(&to, amount).map(drop),
        Action::Transfer {
            from,
            to,
            amount,
            fee_bps,
            fee_sink,
        } => {
            let sink = fee_sink.unwrap_or_else(|| to.clone());
            engine
                .transfer(&from, &to, amount, fee_bps.unwrap_or(Bps::ZERO), &sink)
                .map(drop)
        }
        Action::SetKyc {
            account,
            status,
            jurisdiction,
        } => engine.set_kyc_status(&account, status, jurisdiction).map(drop),
        Action::CreateCampaign {
            campaign,
            owner,
            goal,
            deadline,
            milestones,
            validators,
            required_approvals,
            fee_sink,
            fee_bps,
        } => engine
            .create_campaign(CampaignParams {
                id: campaign,
                owner,
                goal,
                deadline,
                milestone_bps: milestones,
                fee_bps: fee_bps.unwrap_or(fee_model.framework_bps),
                fee_sink,
                validators,
                required_approvals,
            })
            .map(drop),
        Action::DefineToken {
            campaign,
            kind,
            total_supply,
        } => engine.define_token(&campaign, kind, total_supply),
        Action::Contribute {
            campaign,
            contributor,
            amount,
        } => engine.contribute(&campaign, &contributor, amount).map(drop),
        Action::Finalize { campaign } => engine.finalize(&campaign).map(drop),
        Action::Refund { campaign, contributor } => engine.refund(&campaign, &contributor).map(drop),
        Action::ApproveMilestone {
            campaign,
            milestone,
            validator,
        } => engine.approve_milestone(&campaign, milestone, &validator).map(drop),
        Action::Disburse { campaign, milestone } => engine.disburse_milestone(&campaign, milestone).map(drop),
        Action::PlaceOrder {
            campaign,
            trader,
            side,
            quantity,
            limit_price,
        } => engine
            .place_order(NewOrder {
                campaign,
                trader,
                side,
                quantity,
                limit_price,
            })
            .map(drop),
        Action::CancelOrder { order_id, trader } => engine.cancel_order(order_id, &trader).map(drop),
        Action::GenerateReport { from, to } => {
            reports.push(engine.generate_report(from, to)?);
            Ok(())
        }
    }
}

fn scenario_fee_report(scenario: &Scenario, engine: &Engine) -> ScenarioFeeReport {
    let gross: u64 = engine
        .log()
        .records()
        .iter()
        .filter(|r| r.kind == EventKind::Contribute)
        .filter_map(|r| r.payload.u64("gross"))
        .fold(0u64, u64::saturating_add);
    let comparison = fee_comparison(
        Amount::from_minor(gross),
        scenario.fee_model.traditional_bps.value(),
        scenario.fee_model.framework_bps.value(),
    )
    .expect("Bps values are always in range");
    ScenarioFeeReport {
        scenario: scenario.name.clone(),
        fiat: scenario.fiat_rates.iter().map(|r| FiatFeeLine::new(&comparison, r)).collect(),
        comparison,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayVerdict {
    Match,
    Mismatch,
}

/// Runs the scenario twice and compares the exported logs byte for byte.
pub fn replay_verify(scenario: &Scenario) -> Result<ReplayVerdict, ScenarioError> {
    replay_compare(scenario, scenario)
}

/// Compares the final chain of two scenario runs.
pub fn replay_compare(a: &Scenario, b: &Scenario) -> Result<ReplayVerdict, ScenarioError> {
    let first = run_scenario(a, RunOptions::default())?;
    let second = run_scenario(b, RunOptions::default())?;
    let same = first.engine.log().head_hash() == second.engine.log().head_hash()
        && first.events_jsonl() == second.events_jsonl();
    Ok(if same { ReplayVerdict::Match } else { ReplayVerdict::Mismatch })
}
