//! The single-writer engine.
//!
//! Every public mutation validates completely, then applies its effects and
//! appends its event(s). An `Err` return leaves the state untouched.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::amount::{Amount, Bps};
use crate::campaign::{Campaign, CampaignError, CampaignParams, CampaignState, MilestoneStatus};
use crate::compliance::{
    self, ComplianceError, ComplianceReport, DenyReason, GateAction, GateDecision, IdentityRecord, Jurisdiction,
    JurisdictionRule, KycStatus, Registry, RulePolicy, DEFAULT_RULE_KEY,
};
use crate::event::{EventKind, EventLog, Hash, Payload};
use crate::ids::{AccountId, CampaignId, Timestamp};
use crate::ledger::{convert_to_fiat, FiatRate, Ledger, LedgerError, TransferReceipt};
use crate::market::{notional, BookSnapshot, Market, MarketError, Order, OrderBook, OrderId, OrderStatus, Side, Trade};
use crate::tokenization::{CapTable, TokenClass, TokenError, TokenKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Compliance(#[from] ComplianceError),
    #[error("compliance gate denied: {0}")]
    GateDenied(DenyReason),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("clock cannot move from {now} back to {to}")]
    ClockRegression { now: Timestamp, to: Timestamp },
}

impl EngineError {
    /// Stable variant name used in `REJECT` events, e.g. `DeadlinePassed`.
    pub fn code(&self) -> String {
        let debug = match self {
            EngineError::Ledger(e) => format!("{e:?}"),
            EngineError::Compliance(e) => format!("{e:?}"),
            EngineError::Campaign(e) => format!("{e:?}"),
            EngineError::Token(e) => format!("{e:?}"),
            EngineError::Market(e) => format!("{e:?}"),
            EngineError::GateDenied(_) => return "GateDenied".to_string(),
            EngineError::ClockRegression { .. } => return "ClockRegression".to_string(),
        };
        debug
            .split(|c: char| !c.is_alphanumeric())
            .next()
            .unwrap_or_default()
            .to_string()
    }
}

pub type EngineResult<T> = Result<T, EngineError>;

/// A broken engine invariant; always a bug, never a user error.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invariant violated: {0}")]
pub struct InvariantViolation(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewOrder {
    pub campaign: CampaignId,
    pub trader: AccountId,
    pub side: Side,
    pub quantity: u64,
    pub limit_price: Amount,
}

/// Result of placing an order: its state after matching and the trades
/// it produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub order: Order,
    pub trades: Vec<Trade>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccountSnapshot {
    pub id: AccountId,
    pub balance: Amount,
    pub reserved: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RuleSnapshot {
    pub jurisdiction: String,
    pub max_unverified_contribution: Amount,
    pub allowed: bool,
}

/// Full engine state with deterministic key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Snapshot {
    pub clock: Timestamp,
    pub minted_supply: Amount,
    pub accounts: Vec<AccountSnapshot>,
    pub rules: Vec<RuleSnapshot>,
    pub identities: Vec<IdentityRecord>,
    pub campaigns: Vec<Campaign>,
    pub cap_tables: Vec<CapTable>,
    pub orders: Vec<Order>,
    pub trade_count: usize,
    pub log_len: usize,
    pub head_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Engine {
    clock: Timestamp,
    ledger: Ledger,
    log: EventLog,
    registry: Registry,
    campaigns: BTreeMap<CampaignId, Campaign>,
    cap_tables: BTreeMap<CampaignId, CapTable>,
    market: Market,
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}

impl Engine {
    pub fn new() -> Self {
        let mut log = EventLog::new();
        log.append(0, EventKind::Genesis, Payload::new().with("engine", "stablefund").with("format", 1u64));
        Engine {
            clock: 0,
            ledger: Ledger::new(),
            log,
            registry: Registry::new(),
            campaigns: BTreeMap::new(),
            cap_tables: BTreeMap::new(),
            market: Market::default(),
        }
    }

    // ---- clock & accessors ------------------------------------------------

    pub fn now(&self) -> Timestamp {
        self.clock
    }

    pub fn advance_to(&mut self, to: Timestamp) -> EngineResult<()> {
        if to < self.clock {
            return Err(EngineError::ClockRegression { now: self.clock, to });
        }
        self.clock = to;
        Ok(())
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn market(&self) -> &Market {
        &self.market
    }

    pub fn campaign(&self, id: &CampaignId) -> EngineResult<&Campaign> {
        self.campaigns
            .get(id)
            .ok_or_else(|| CampaignError::UnknownCampaign(id.clone()).into())
    }

    pub fn campaigns(&self) -> impl Iterator<Item = &Campaign> {
        self.campaigns.values()
    }

    pub fn cap_table(&self, id: &CampaignId) -> Option<&CapTable> {
        self.cap_tables.get(id)
    }

    pub fn balance(&self, id: &AccountId) -> EngineResult<Amount> {
        Ok(self.ledger.balance(id)?)
    }

    fn emit(&mut self, kind: EventKind, payload: Payload) {
        self.log.append(self.clock, kind, payload);
    }

    fn user_account(&self, id: &AccountId) -> EngineResult<()> {
        if id.is_system() {
            return Err(LedgerError::SystemAccount(id.clone()).into());
        }
        self.ledger.account(id)?;
        Ok(())
    }

    fn gate(&self, account: &AccountId, action: GateAction) -> EngineResult<()> {
        match self.registry.check_gate(account, action) {
            GateDecision::Allow => Ok(()),
            GateDecision::Deny(reason) => Err(EngineError::GateDenied(reason)),
        }
    }

    /// Records a rejected command. The state is not touched.
    pub fn record_rejection(&mut self, action: &str, error: &EngineError) {
        let payload = Payload::new()
            .with("action", action)
            .with("error", error.code())
            .with("message", error.to_string());
        self.emit(EventKind::Reject, payload);
    }

    // ---- core ledger ------------------------------------------------------

    pub fn create_account(&mut self, id: &str) -> EngineResult<AccountId> {
        let account = AccountId::new(id).map_err(|e| LedgerError::InvalidId(e.0))?;
        if account.is_system() {
            return Err(LedgerError::InvalidId(id.to_string()).into());
        }
        self.ledger.create_account(account.clone())?;
        self.emit(EventKind::Create, Payload::new().with("account", &account));
        Ok(account)
    }

    pub fn mint(&mut self, to: &AccountId, amount: Amount) -> EngineResult<Amount> {
        self.user_account(to)?;
        let balance = self.ledger.mint(to, amount)?;
        self.emit(
            EventKind::Mint,
            Payload::new().with("to", to).with("amount", amount).with("balance", balance),
        );
        Ok(balance)
    }

    pub fn transfer(
        &mut self,
        from: &AccountId,
        to: &AccountId,
        amount: Amount,
        fee_bps: Bps,
        fee_sink: &AccountId,
    ) -> EngineResult<TransferReceipt> {
        for account in [from, to, fee_sink] {
            self.user_account(account)?;
        }
        let receipt = self.ledger.transfer(from, to, amount, fee_bps, fee_sink)?;
        self.emit(
            EventKind::Transfer,
            Payload::new()
                .with("from", from)
                .with("to", to)
                .with("gross", receipt.gross)
                .with("net", receipt.net)
                .with("fee", receipt.fee)
                .with("fee_bps", fee_bps)
                .with("fee_sink", fee_sink),
        );
        Ok(receipt)
    }

    pub fn convert_to_fiat(&self, amount: Amount, rate: &FiatRate) -> u128 {
        convert_to_fiat(amount, rate)
    }

    // ---- compliance -------------------------------------------------------

    pub fn set_default_rule(&mut self, policy: RulePolicy) {
        self.registry.set_default_rule(policy);
        self.emit(EventKind::Rule, compliance::rule_payload(DEFAULT_RULE_KEY, policy));
    }

    pub fn set_jurisdiction_rule(&mut self, rule: &JurisdictionRule) {
        self.registry.set_rule(rule);
        self.emit(
            EventKind::Rule,
            compliance::rule_payload(rule.jurisdiction.as_str(), rule.policy()),
        );
    }

    pub fn set_kyc_status(
        &mut self,
        account: &AccountId,
        status: KycStatus,
        jurisdiction: Jurisdiction,
    ) -> EngineResult<IdentityRecord> {
        self.user_account(account)?;
        let record = self.registry.set_status(account, status, jurisdiction, self.clock)?;
        self.emit(EventKind::Kyc, compliance::kyc_payload(&record));
        Ok(record)
    }

    pub fn check_gate(&self, account: &AccountId, action: GateAction) -> GateDecision {
        self.registry.check_gate(account, action)
    }

    pub fn generate_report(&self, from: Timestamp, to: Timestamp) -> EngineResult<ComplianceReport> {
        Ok(compliance::generate_report(self.log.records(), from, to, self.clock)?)
    }

    // ---- campaigns --------------------------------------------------------

    pub fn create_campaign(&mut self, params: CampaignParams) -> EngineResult<CampaignId> {
        self.user_account(&params.owner)?;
        self.user_account(&params.fee_sink)?;
        for validator in &params.validators {
            self.user_account(validator)?;
        }
        if self.campaigns.contains_key(&params.id) {
            return Err(CampaignError::DuplicateCampaign(params.id).into());
        }
        self.gate(&params.owner, GateAction::CreateCampaign)?;
        let campaign = Campaign::new(params.clone(), self.clock)?;
        self.ledger.create_account(campaign.escrow_account.clone())?;

        let payload = Payload::new()
            .with("campaign", &campaign.id)
            .with("owner", &campaign.owner)
            .with("goal", campaign.goal)
            .with("deadline", campaign.deadline)
            .with("milestone_bps", params.milestone_bps.iter().map(|b| b.value()).collect::<Vec<_>>())
            .with("fee_bps", campaign.fee_bps)
            .with("fee_sink", &campaign.fee_sink)
            .with("validators", params.validators.iter().map(|v| v.as_str()).collect::<Vec<_>>())
            .with("required_approvals", params.required_approvals)
            .with("escrow", &campaign.escrow_account);
        let id = campaign.id.clone();
        self.campaigns.insert(id.clone(), campaign);
        self.emit(EventKind::CreateCampaign, payload);
        Ok(id)
    }

    pub fn define_token(&mut self, campaign: &CampaignId, kind: TokenKind, total_supply: u64) -> EngineResult<()> {
        let c = self.campaign(campaign)?;
        if c.state != CampaignState::Active {
            return Err(TokenError::CampaignClosed.into());
        }
        if self.cap_tables.contains_key(campaign) {
            return Err(TokenError::DuplicateTokenClass.into());
        }
        if total_supply == 0 {
            return Err(TokenError::ZeroSupply.into());
        }
        let class = TokenClass {
            campaign_id: campaign.clone(),
            kind,
            total_supply,
        };
        self.cap_tables.insert(campaign.clone(), CapTable::new(class));
        self.emit(
            EventKind::DefineToken,
            Payload::new()
                .with("campaign", campaign)
                .with("kind", kind.to_string())
                .with("total_supply", total_supply),
        );
        Ok(())
    }

    /// Returns the contributor's running net total.
    pub fn contribute(&mut self, campaign: &CampaignId, contributor: &AccountId, amount: Amount) -> EngineResult<Amount> {
        let c = self.campaign(campaign)?;
        self.user_account(contributor)?;
        c.ensure_accepting(self.clock)?;
        if amount.is_zero() {
            return Err(LedgerError::ZeroAmount.into());
        }
        self.gate(contributor, GateAction::Contribute(amount))?;
        let (escrow, fee_bps, fee_sink) = (c.escrow_account.clone(), c.fee_bps, c.fee_sink.clone());
        let receipt = self.ledger.transfer(contributor, &escrow, amount, fee_bps, &fee_sink)?;
        let c = self.campaigns.get_mut(campaign).expect("looked up above");
        let total = c.record_contribution(contributor, receipt.net);
        self.emit(
            EventKind::Contribute,
            Payload::new()
                .with("campaign", campaign)
                .with("contributor", contributor)
                .with("gross", receipt.gross)
                .with("fee", receipt.fee)
                .with("net", receipt.net)
                .with("fee_sink", &fee_sink)
                .with("total", total),
        );
        Ok(total)
    }

    /// Closes the funding window. A funded campaign with a token class is
    /// allocated immediately.
    pub fn finalize(&mut self, campaign: &CampaignId) -> EngineResult<CampaignState> {
        self.campaign(campaign)?;
        let now = self.clock;
        let c = self.campaigns.get_mut(campaign).expect("looked up above");
        let state = c.finalize(now)?;
        let raised = c.raised();
        self.emit(
            EventKind::Finalize,
            Payload::new()
                .with("campaign", campaign)
                .with("state", state.as_str())
                .with("raised", raised),
        );
        if state == CampaignState::Funded && self.cap_tables.contains_key(campaign) {
            self.allocate(campaign)?;
        }
        Ok(state)
    }

    pub fn allocate(&mut self, campaign: &CampaignId) -> EngineResult<&CapTable> {
        let c = self.campaign(campaign)?;
        if !matches!(c.state, CampaignState::Funded | CampaignState::Completed) {
            return Err(TokenError::NotFunded.into());
        }
        let contributions = c.contributions.clone();
        let table = self.cap_tables.get_mut(campaign).ok_or(TokenError::NoTokenClass)?;
        table.allocate(&contributions)?;
        let holders: Vec<&str> = table.holdings.keys().map(AccountId::as_str).collect();
        let units: Vec<u64> = table.holdings.values().map(|h| h.units).collect();
        let payload = Payload::new()
            .with("campaign", campaign)
            .with("total_supply", table.class.total_supply)
            .with("holders", holders)
            .with("units", units);
        self.emit(EventKind::Allocate, payload);
        Ok(&self.cap_tables[campaign])
    }

    pub fn token_balance(&self, campaign: &CampaignId, holder: &AccountId) -> EngineResult<u64> {
        self.campaign(campaign)?;
        let table = self.cap_tables.get(campaign).ok_or(TokenError::NoAllocation)?;
        Ok(table.balance(holder)?)
    }

    /// Returns the contribution to the caller. The contribution is zeroed
    /// before the escrow pays out.
    pub fn refund(&mut self, campaign: &CampaignId, contributor: &AccountId) -> EngineResult<Amount> {
        let c = self.campaign(campaign)?;
        self.user_account(contributor)?;
        let amount = c.plan_refund(contributor, self.clock)?;
        let escrow = c.escrow_account.clone();
        if self.ledger.available(&escrow)? < amount {
            // escrow identity guarantees this never happens
            return Err(LedgerError::InsufficientFunds {
                account: escrow,
                available: self.ledger.available(&c.escrow_account)?,
                needed: amount,
            }
            .into());
        }
        let c = self.campaigns.get_mut(campaign).expect("looked up above");
        let amount = c.clear_contribution(contributor);
        self.ledger
            .move_funds(&escrow, contributor, amount)
            .expect("escrow balance checked");
        self.emit(
            EventKind::Refund,
            Payload::new()
                .with("campaign", campaign)
                .with("contributor", contributor)
                .with("amount", amount),
        );
        Ok(amount)
    }

    /// Returns the number of distinct approvals after this one.
    pub fn approve_milestone(&mut self, campaign: &CampaignId, index: usize, validator: &AccountId) -> EngineResult<usize> {
        self.campaign(campaign)?;
        let c = self.campaigns.get_mut(campaign).expect("looked up above");
        let count = c.approve(index, validator)?;
        let status = c.milestones[index].status;
        self.emit(
            EventKind::Approve,
            Payload::new()
                .with("campaign", campaign)
                .with("milestone", index)
                .with("validator", validator)
                .with("approvals", count)
                .with("approved", status == MilestoneStatus::Approved),
        );
        Ok(count)
    }

    pub fn disburse_milestone(&mut self, campaign: &CampaignId, index: usize) -> EngineResult<Amount> {
        let c = self.campaign(campaign)?;
        let amount = c.plan_disbursement(index)?;
        let (escrow, owner) = (c.escrow_account.clone(), c.owner.clone());
        if !amount.is_zero() {
            self.ledger.move_funds(&escrow, &owner, amount)?;
        }
        let c = self.campaigns.get_mut(campaign).expect("looked up above");
        c.record_disbursement(index, amount);
        let state = c.state;
        self.emit(
            EventKind::Disburse,
            Payload::new()
                .with("campaign", campaign)
                .with("milestone", index)
                .with("owner", &owner)
                .with("amount", amount)
                .with("state", state.as_str()),
        );
        Ok(amount)
    }

    // ---- market -----------------------------------------------------------

    pub fn place_order(&mut self, new: NewOrder) -> EngineResult<Placement> {
        if !self.campaigns.contains_key(&new.campaign) {
            return Err(MarketError::UnknownCampaign(new.campaign).into());
        }
        match self.cap_tables.get(&new.campaign) {
            Some(table) if table.allocated => {}
            _ => return Err(TokenError::NoAllocation.into()),
        }
        if new.quantity == 0 || new.limit_price.is_zero() {
            return Err(MarketError::InvalidOrder.into());
        }
        self.user_account(&new.trader)?;
        let value = notional(new.quantity, new.limit_price);
        self.gate(&new.trader, GateAction::Trade(value))?;
        let table = &self.cap_tables[&new.campaign];
        match new.side {
            Side::Sell => {
                let available = table.free(&new.trader);
                if available < new.quantity {
                    return Err(TokenError::InsufficientTokens {
                        holder: new.trader,
                        available,
                        needed: new.quantity,
                    }
                    .into());
                }
            }
            Side::Buy => {
                let available = self.ledger.available(&new.trader)?;
                if available < value {
                    return Err(LedgerError::InsufficientFunds {
                        account: new.trader,
                        available,
                        needed: value,
                    }
                    .into());
                }
            }
        }

        // Validated; from here on nothing fails.
        let order_id = self.market.next_order_id;
        self.market.next_order_id += 1;
        let reserved_cash = match new.side {
            Side::Buy => {
                self.ledger.reserve(&new.trader, value).expect("funds checked");
                value
            }
            Side::Sell => {
                let table = self.cap_tables.get_mut(&new.campaign).expect("checked");
                table.reserve(&new.trader, new.quantity).expect("tokens checked");
                Amount::ZERO
            }
        };
        let mut order = Order {
            order_id,
            campaign_id: new.campaign.clone(),
            side: new.side,
            trader: new.trader.clone(),
            quantity: new.quantity,
            original_quantity: new.quantity,
            limit_price: new.limit_price,
            placed_at: self.clock,
            status: OrderStatus::Open,
            reserved_cash,
        };
        self.emit(
            EventKind::Order,
            Payload::new()
                .with("order_id", order_id)
                .with("campaign", &new.campaign)
                .with("side", new.side.as_str())
                .with("trader", &new.trader)
                .with("quantity", new.quantity)
                .with("limit_price", new.limit_price)
                .with("notional", value),
        );

        let book = self.market.books.entry(new.campaign.clone()).or_default();
        let (fills, remaining) = book.execute(new.side, new.limit_price, new.quantity);
        let mut trades = Vec::with_capacity(fills.len());
        for fill in fills {
            let mut resting = self.market.orders.remove(&fill.resting_id).expect("resting order is tracked");
            let (buy, sell) = match new.side {
                Side::Buy => (&mut order, &mut resting),
                Side::Sell => (&mut resting, &mut order),
            };
            let trade = settle(
                &mut self.ledger,
                self.cap_tables.get_mut(&new.campaign).expect("checked"),
                buy,
                sell,
                fill.quantity,
                fill.price,
                self.market.trades.len() as u64,
                self.clock,
            );
            self.market.orders.insert(resting.order_id, resting);
            self.emit(
                EventKind::Trade,
                Payload::new()
                    .with("trade_id", trade.trade_id)
                    .with("campaign", &trade.campaign_id)
                    .with("buy_order_id", trade.buy_order_id)
                    .with("sell_order_id", trade.sell_order_id)
                    .with("buyer", &trade.buyer)
                    .with("seller", &trade.seller)
                    .with("quantity", trade.quantity)
                    .with("price", trade.price)
                    .with("value", trade.value),
            );
            self.market.trades.push(trade.clone());
            trades.push(trade);
        }
        debug_assert_eq!(order.quantity, remaining);
        if remaining > 0 {
            self.market
                .books
                .get_mut(&new.campaign)
                .expect("created above")
                .rest(new.side, new.limit_price, order_id, remaining);
        }
        self.market.orders.insert(order_id, order.clone());
        Ok(Placement { order, trades })
    }

    pub fn cancel_order(&mut self, order_id: OrderId, trader: &AccountId) -> EngineResult<Order> {
        let order = self.market.orders.get(&order_id).ok_or(MarketError::UnknownOrder(order_id))?;
        if &order.trader != trader {
            return Err(MarketError::NotOwner(order_id).into());
        }
        if !order.status.is_live() {
            return Err(MarketError::AlreadyClosed(order_id).into());
        }
        let mut order = order.clone();
        match order.side {
            Side::Buy => {
                self.ledger.release(trader, order.reserved_cash).expect("reservation tracked");
                order.reserved_cash = Amount::ZERO;
            }
            Side::Sell => {
                let table = self.cap_tables.get_mut(&order.campaign_id).expect("order campaign has tokens");
                table.release(trader, order.quantity);
            }
        }
        let removed = self
            .market
            .books
            .get_mut(&order.campaign_id)
            .map(|b| b.remove(order.side, order.limit_price, order_id))
            .unwrap_or(false);
        debug_assert!(removed, "live order must be on the book");
        order.status = OrderStatus::Cancelled;
        self.market.orders.insert(order_id, order.clone());
        self.emit(
            EventKind::Cancel,
            Payload::new()
                .with("order_id", order_id)
                .with("trader", trader)
                .with("remaining", order.quantity),
        );
        Ok(order)
    }

    pub fn book_snapshot(&self, campaign: &CampaignId) -> BookSnapshot {
        self.market.book(campaign).map(OrderBook::snapshot).unwrap_or_default()
    }

    // ---- state views --------------------------------------------------------

    pub fn snapshot(&self) -> Snapshot {
        let mut rules = vec![RuleSnapshot {
            jurisdiction: DEFAULT_RULE_KEY.to_string(),
            max_unverified_contribution: self.registry.default_rule().max_unverified_contribution,
            allowed: self.registry.default_rule().allowed,
        }];
        rules.extend(self.registry.rules().map(|(j, p)| RuleSnapshot {
            jurisdiction: j.to_string(),
            max_unverified_contribution: p.max_unverified_contribution,
            allowed: p.allowed,
        }));
        Snapshot {
            clock: self.clock,
            minted_supply: self.ledger.minted_supply(),
            accounts: self
                .ledger
                .accounts()
                .map(|(id, a)| AccountSnapshot {
                    id: id.clone(),
                    balance: a.balance,
                    reserved: a.reserved,
                })
                .collect(),
            rules,
            identities: self.registry.identities().cloned().collect(),
            campaigns: self.campaigns.values().cloned().collect(),
            cap_tables: self.cap_tables.values().cloned().collect(),
            orders: self.market.orders.values().cloned().collect(),
            trade_count: self.market.trades.len(),
            log_len: self.log.len(),
            head_hash: hex::encode(self.log.head_hash()),
        }
    }

    /// Hash of the business state: everything except the clock and the log.
    pub fn state_hash(&self) -> Hash {
        let mut snapshot = self.snapshot();
        snapshot.clock = 0;
        snapshot.log_len = 0;
        snapshot.head_hash = String::new();
        let bytes = serde_json::to_vec(&snapshot).expect("snapshot serializes");
        Sha256::digest(bytes).into()
    }

    /// `campaign,account,units` for every allocated cap table.
    pub fn captable_csv(&self) -> String {
        let mut out = String::from("campaign,account,units\n");
        for table in self.cap_tables.values().filter(|t| t.allocated) {
            for row in table.csv_rows() {
                out.push_str(&row);
                out.push('\n');
            }
        }
        out
    }

    /// Checks every cross-module invariant. Cheap enough to run after
    /// every command.
    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let fail = |msg: String| Err(InvariantViolation(msg));

        let minted = u128::from(self.ledger.minted_supply().minor_units());
        if self.ledger.total_balances() != minted {
            return fail(format!(
                "conservation: balances {} != minted {}",
                self.ledger.total_balances(),
                minted
            ));
        }

        let mut buy_reservations: BTreeMap<&AccountId, u128> = BTreeMap::new();
        let mut sell_reservations: BTreeMap<(&CampaignId, &AccountId), u64> = BTreeMap::new();
        for order in self.market.orders.values().filter(|o| o.status.is_live()) {
            match order.side {
                Side::Buy => {
                    if order.reserved_cash != notional(order.quantity, order.limit_price) {
                        return fail(format!("order {} reservation drifted", order.order_id));
                    }
                    *buy_reservations.entry(&order.trader).or_default() += u128::from(order.reserved_cash.minor_units());
                }
                Side::Sell => {
                    *sell_reservations.entry((&order.campaign_id, &order.trader)).or_default() += order.quantity;
                }
            }
        }
        for (id, account) in self.ledger.accounts() {
            if account.reserved > account.balance {
                return fail(format!("{id} reserves more than it holds"));
            }
            let expected = buy_reservations.get(id).copied().unwrap_or(0);
            if u128::from(account.reserved.minor_units()) != expected {
                return fail(format!("{id} reserved {} but open bids need {expected}", account.reserved));
            }
        }

        for c in self.campaigns.values() {
            if !c.escrow_identity_holds() {
                return fail(format!("campaign {} escrow identity broken", c.id));
            }
            let held = self.ledger.balance(&c.escrow_account).unwrap_or(Amount::ZERO);
            if held != c.escrow_balance {
                return fail(format!("campaign {} escrow {} != ledger {}", c.id, c.escrow_balance, held));
            }
            match c.state {
                CampaignState::Active | CampaignState::Failed => {
                    if c.raised() != c.escrow_balance {
                        return fail(format!("campaign {} contributions do not match escrow", c.id));
                    }
                    if !c.total_disbursed.is_zero() {
                        return fail(format!("campaign {} disbursed without funding", c.id));
                    }
                }
                CampaignState::Funded | CampaignState::Completed => {
                    if !c.total_refunded.is_zero() {
                        return fail(format!("campaign {} refunded after funding", c.id));
                    }
                }
            }
            if c.state == CampaignState::Completed && (!c.escrow_balance.is_zero() || c.total_disbursed != c.total_raised) {
                return fail(format!("completed campaign {} left escrow dust", c.id));
            }
        }

        for (cid, table) in &self.cap_tables {
            if !table.allocated {
                continue;
            }
            if table.total_units() != u128::from(table.class.total_supply) {
                return fail(format!("cap table {cid} does not sum to supply"));
            }
            for (holder, h) in &table.holdings {
                let expected = sell_reservations.get(&(cid, holder)).copied().unwrap_or(0);
                if h.reserved != expected || h.reserved > h.units {
                    return fail(format!("cap table {cid} reservation for {holder} drifted"));
                }
            }
        }

        for (cid, book) in self.market.books() {
            if book.is_crossed() {
                return fail(format!("book {cid} is crossed"));
            }
            for (side, price, id, remaining) in book.resting() {
                let live = self.market.orders.get(&id).is_some_and(|o| {
                    o.status.is_live() && o.side == side && o.limit_price == price && o.quantity == remaining
                });
                if !live {
                    return fail(format!("book {cid} holds stale order {id}"));
                }
            }
        }
        Ok(())
    }
}

/// Executes one fill between a buy and a sell order at `price`.
#[allow(clippy::too_many_arguments)]
fn settle(
    ledger: &mut Ledger,
    table: &mut CapTable,
    buy: &mut Order,
    sell: &mut Order,
    quantity: u64,
    price: Amount,
    trade_id: u64,
    now: Timestamp,
) -> Trade {
    let value = notional(quantity, price);
    for order in [&mut *buy, &mut *sell] {
        order.quantity -= quantity;
        order.status = if order.quantity == 0 {
            OrderStatus::Filled
        } else {
            OrderStatus::PartiallyFilled
        };
    }
    // Shrink the bid's lock to cover only what is still open; the freed
    // part always covers this fill because price <= the bid's limit.
    let still_locked = notional(buy.quantity, buy.limit_price);
    let freed = buy.reserved_cash.checked_sub(still_locked).expect("lock only shrinks");
    ledger.release(&buy.trader, freed).expect("lock tracked");
    buy.reserved_cash = still_locked;

    table.settle(&sell.trader, &buy.trader, quantity);
    if buy.trader != sell.trader && !value.is_zero() {
        ledger
            .move_funds(&buy.trader, &sell.trader, value)
            .expect("freed lock covers the fill");
    }
    Trade {
        trade_id,
        campaign_id: buy.campaign_id.clone(),
        buy_order_id: buy.order_id,
        sell_order_id: sell.order_id,
        buyer: buy.trader.clone(),
        seller: sell.trader.clone(),
        quantity,
        price,
        value,
        executed_at: now,
    }
}
