//! Seeded random scenarios for property checks and fuzzing.
//!
//! The generator runs its own engine while it writes commands, so most
//! choices target real state (open campaigns, actual holders, live
//! orders). A share of commands is deliberately invalid. The output is a
//! plain [`Scenario`]: a failing case can be saved and replayed like any
//! hand-written one.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::amount::{Amount, Bps, UNITS_PER_COIN};
use crate::campaign::{Campaign, CampaignState, MilestoneStatus};
use crate::compliance::{GateAction, Jurisdiction, JurisdictionRule, KycStatus, RulePolicy};
use crate::engine::Engine;
use crate::ids::{AccountId, CampaignId, Timestamp};
use crate::ledger::FiatRate;
use crate::market::Side;
use crate::scenario::{execute, Action, Command, FeeModel, Scenario};
use crate::tokenization::TokenKind;

const JURISDICTIONS: [&str; 6] = ["TR", "TR", "US", "DE", "DE", "KP"];
const FEE_SINK: &str = "platform";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub accounts: usize,
    pub steps: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { accounts: 6, steps: 60 }
    }
}

fn coins(rng: &mut ChaCha8Rng, lo: u64, hi: u64) -> Amount {
    let whole = rng.gen_range(lo..=hi);
    let frac = if rng.gen_bool(0.3) { rng.gen_range(0..UNITS_PER_COIN) } else { 0 };
    Amount::from_minor(whole * UNITS_PER_COIN + frac)
}

fn jurisdiction(code: &str) -> Jurisdiction {
    Jurisdiction::new(code).expect("fixed codes are valid")
}

fn account(id: &str) -> AccountId {
    AccountId::new(id).expect("generated ids are valid")
}

struct Builder {
    rng: ChaCha8Rng,
    engine: Engine,
    fee_model: FeeModel,
    accounts: Vec<AccountId>,
    created: usize,
    commands: Vec<Command>,
}

impl Builder {
    fn push(&mut self, action: Action) {
        let at = self.engine.now();
        execute(&mut self.engine, self.fee_model, &action, &mut Vec::new());
        self.commands.push(Command { at, action });
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn any_account(&mut self) -> AccountId {
        self.accounts.choose(&mut self.rng).expect("at least one account").clone()
    }

    /// Usually an account the gate lets through for `action`.
    fn cleared_account(&mut self, action: GateAction) -> AccountId {
        let cleared: Vec<AccountId> = self
            .accounts
            .iter()
            .filter(|a| self.engine.check_gate(a, action).is_allowed())
            .cloned()
            .collect();
        match cleared.choose(&mut self.rng) {
            Some(a) if self.rng.gen_bool(0.85) => a.clone(),
            _ => self.any_account(),
        }
    }

    /// Usually a campaign matching `wanted`, sometimes any known one.
    fn campaign_where(&mut self, wanted: impl Fn(&Campaign, Timestamp) -> bool) -> Option<Campaign> {
        let now = self.engine.now();
        let all: Vec<&Campaign> = self.engine.campaigns().collect();
        let fitting: Vec<&Campaign> = all.iter().copied().filter(|c| wanted(c, now)).collect();
        let stray = self.rng.gen_bool(0.1);
        let pick = if stray { all.choose(&mut self.rng) } else { fitting.choose(&mut self.rng) };
        pick.map(|c| (*c).clone())
    }

    fn set_kyc(&mut self, who: AccountId) {
        let status = *[KycStatus::Unverified, KycStatus::Verified, KycStatus::Verified, KycStatus::Barred]
            .choose(&mut self.rng)
            .expect("non-empty");
        let code = *JURISDICTIONS.choose(&mut self.rng).expect("non-empty");
        self.push(Action::SetKyc {
            account: who,
            status,
            jurisdiction: jurisdiction(code),
        });
    }

    fn milestone_split(&mut self) -> Vec<Bps> {
        let n = self.rng.gen_range(1..=3usize);
        let mut cuts: Vec<u64> = (0..n - 1).map(|_| self.rng.gen_range(1..10_000)).collect();
        cuts.sort_unstable();
        let mut parts = Vec::with_capacity(n);
        let mut prev = 0;
        for cut in cuts.into_iter().chain([10_000]) {
            parts.push(cut - prev);
            prev = cut;
        }
        if self.chance(0.05) {
            // occasionally a schedule that does not sum to 100%
            parts[0] = parts[0].saturating_sub(1);
        }
        parts.into_iter().map(|b| Bps::new(b).expect("within 0..=10000")).collect()
    }

    fn create_campaign(&mut self) {
        let id = CampaignId::new(format!("c{}", self.created)).expect("valid id");
        self.created += 1;
        let owner = self.cleared_account(GateAction::CreateCampaign);
        let milestones = self.milestone_split();
        let k = self.rng.gen_range(1..=self.accounts.len().min(3));
        let mut validators: Vec<AccountId> = self.accounts.choose_multiple(&mut self.rng, k).cloned().collect();
        validators.sort();
        let required = self.rng.gen_range(1..=validators.len());
        let goal = coins(&mut self.rng, 5, 100);
        let deadline = self.engine.now() + self.rng.gen_range(20..160);
        let fee_bps = self.chance(0.5).then(|| Bps::new(self.rng.gen_range(0..=500)).expect("in range"));
        self.push(Action::CreateCampaign {
            campaign: id.clone(),
            owner,
            goal,
            deadline,
            milestones,
            validators,
            required_approvals: required,
            fee_sink: account(FEE_SINK),
            fee_bps,
        });
        if self.chance(0.75) {
            let kind = *[TokenKind::Equity, TokenKind::Reward, TokenKind::Hybrid]
                .choose(&mut self.rng)
                .expect("non-empty");
            let total_supply = self.rng.gen_range(1..=1_000u64) * UNITS_PER_COIN + self.rng.gen_range(0..1_000);
            self.push(Action::DefineToken {
                campaign: id,
                kind,
                total_supply,
            });
        }
    }

    fn contribute(&mut self) {
        let Some(c) = self.campaign_where(|c, now| c.state == CampaignState::Active && now < c.deadline) else {
            return self.create_campaign();
        };
        let amount = coins(&mut self.rng, 0, 120);
        let contributor = if self.chance(0.8) {
            self.cleared_account(GateAction::Contribute(amount))
        } else {
            self.any_account()
        };
        self.push(Action::Contribute {
            campaign: c.id,
            contributor,
            amount,
        });
    }

    fn finalize(&mut self) {
        if let Some(c) = self.campaign_where(|c, now| c.state == CampaignState::Active && now >= c.deadline) {
            self.push(Action::Finalize { campaign: c.id });
        }
    }

    fn refund(&mut self) {
        let owed = |c: &Campaign, _| c.state == CampaignState::Failed && !c.escrow_balance.is_zero();
        let Some(c) = self.campaign_where(owed) else {
            return;
        };
        let backers: Vec<AccountId> = c.contributions.iter().filter(|(_, a)| !a.is_zero()).map(|(b, _)| b.clone()).collect();
        let contributor = match backers.choose(&mut self.rng) {
            Some(b) if self.rng.gen_bool(0.85) => b.clone(),
            _ => self.any_account(),
        };
        self.push(Action::Refund {
            campaign: c.id,
            contributor,
        });
    }

    fn milestone_of(&mut self, c: &Campaign) -> usize {
        let next = c
            .milestones
            .iter()
            .position(|m| m.status != MilestoneStatus::Disbursed)
            .unwrap_or(c.milestones.len());
        if self.chance(0.85) {
            next
        } else {
            self.rng.gen_range(0..=c.milestones.len())
        }
    }

    fn approve(&mut self) {
        let Some(c) = self.campaign_where(|c, _| c.state == CampaignState::Funded) else {
            return;
        };
        let milestone = self.milestone_of(&c);
        let validators: Vec<AccountId> = match c.milestones.get(milestone) {
            Some(m) => m.validators.difference(&m.approvals).cloned().collect(),
            None => Vec::new(),
        };
        let validator = match validators.choose(&mut self.rng) {
            Some(v) if self.rng.gen_bool(0.85) => v.clone(),
            _ => self.any_account(),
        };
        self.push(Action::ApproveMilestone {
            campaign: c.id,
            milestone,
            validator,
        });
    }

    fn disburse(&mut self) {
        let ready = |c: &Campaign, _| {
            c.state == CampaignState::Funded && c.milestones.iter().any(|m| m.status == MilestoneStatus::Approved)
        };
        let Some(c) = self.campaign_where(ready) else {
            return;
        };
        let milestone = self.milestone_of(&c);
        self.push(Action::Disburse { campaign: c.id, milestone });
    }

    fn place_order(&mut self) {
        let allocated: Vec<CampaignId> = self
            .engine
            .campaigns()
            .filter(|c| self.engine.cap_table(&c.id).is_some_and(|t| t.allocated))
            .map(|c| c.id.clone())
            .collect();
        let traded = |c: &Campaign, _| allocated.contains(&c.id);
        let Some(c) = self.campaign_where(traded) else {
            return;
        };
        let price = Amount::from_minor(self.rng.gen_range(1..=40u64) * UNITS_PER_COIN / 4);
        let side = if self.chance(0.5) { Side::Buy } else { Side::Sell };
        let sellers: Vec<(AccountId, u64)> = self
            .engine
            .cap_table(&c.id)
            .map(|table| {
                table
                    .holdings
                    .keys()
                    .map(|h| (h.clone(), table.free(h)))
                    .filter(|(_, free)| *free > 0)
                    .collect()
            })
            .unwrap_or_default();
        let (trader, quantity) = match sellers.choose(&mut self.rng) {
            Some((h, free)) if side == Side::Sell && self.rng.gen_bool(0.85) => {
                let (h, free) = (h.clone(), *free);
                (h, self.rng.gen_range(1..=free))
            }
            _ => {
                let trader = self.cleared_account(GateAction::Trade(Amount::from_minor(1)));
                let cash = self.engine.ledger().available(&trader).map_or(0, |a| a.minor_units());
                // aim for an affordable order most of the time
                let cap = u128::from(cash) * u128::from(UNITS_PER_COIN) / u128::from(price.minor_units());
                let cap = u64::try_from(cap).unwrap_or(u64::MAX).clamp(1, 50 * UNITS_PER_COIN);
                (trader, self.rng.gen_range(1..=cap))
            }
        };
        self.push(Action::PlaceOrder {
            campaign: c.id,
            trader,
            side,
            quantity,
            limit_price: price,
        });
    }

    fn cancel_order(&mut self) {
        let live: Vec<(u64, AccountId)> = self
            .engine
            .market()
            .orders()
            .filter(|o| o.status.is_live())
            .map(|o| (o.order_id, o.trader.clone()))
            .collect();
        let (order_id, trader) = match live.choose(&mut self.rng) {
            Some(x) if self.rng.gen_bool(0.8) => x.clone(),
            _ => {
                let next = self.engine.market().next_order_id();
                (self.rng.gen_range(0..=next), self.any_account())
            }
        };
        self.push(Action::CancelOrder { order_id, trader });
    }

    fn step(&mut self) {
        let now = self.engine.now() + self.rng.gen_range(0..20);
        self.engine.advance_to(now).expect("time only moves forward");
        match self.rng.gen_range(0..100) {
            0..=4 => self.create_campaign(),
            5..=32 => self.contribute(),
            33..=39 => self.finalize(),
            40..=44 => self.refund(),
            45..=54 => self.approve(),
            55..=60 => self.disburse(),
            61..=78 => self.place_order(),
            79..=82 => self.cancel_order(),
            83..=86 => {
                let (from, to) = (self.any_account(), self.any_account());
                let amount = coins(&mut self.rng, 0, 50);
                let fee_bps = self.chance(0.5).then(|| Bps::new(self.rng.gen_range(0..=500)).expect("in range"));
                self.push(Action::Transfer {
                    from,
                    to,
                    amount,
                    fee_bps,
                    fee_sink: Some(account(FEE_SINK)),
                });
            }
            87..=92 => {
                let who = self.any_account();
                self.set_kyc(who);
            }
            93..=96 => {
                let to = self.any_account();
                let amount = coins(&mut self.rng, 1, 200);
                self.push(Action::Mint { to, amount });
            }
            _ => {
                let from = self.rng.gen_range(0..=now);
                let to = if self.chance(0.9) { now } else { from.saturating_sub(1) };
                self.push(Action::GenerateReport { from, to });
            }
        }
    }
}

/// Builds a random scenario. The same seed and config always produce the
/// same scenario.
pub fn generate_scenario(seed: u64, config: GeneratorConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accounts: Vec<AccountId> = (0..config.accounts.max(1)).map(|i| account(&format!("u{i}"))).collect();

    let default_rule = RulePolicy {
        max_unverified_contribution: coins(&mut rng, 0, 40),
        allowed: true,
    };
    let jurisdiction_rules = vec![
        JurisdictionRule {
            jurisdiction: jurisdiction("TR"),
            max_unverified_contribution: coins(&mut rng, 0, 80),
            allowed: true,
        },
        JurisdictionRule {
            jurisdiction: jurisdiction("KP"),
            max_unverified_contribution: Amount::ZERO,
            allowed: false,
        },
    ];
    let mut engine = Engine::new();
    engine.set_default_rule(default_rule);
    for rule in &jurisdiction_rules {
        engine.set_jurisdiction_rule(rule);
    }

    let mut b = Builder {
        rng,
        engine,
        fee_model: FeeModel::default(),
        accounts,
        created: 0,
        commands: Vec::new(),
    };
    b.push(Action::CreateAccount { id: FEE_SINK.to_string() });
    for id in b.accounts.clone() {
        b.push(Action::CreateAccount { id: id.to_string() });
        let amount = coins(&mut b.rng, 50, 500);
        b.push(Action::Mint { to: id.clone(), amount });
        if b.chance(0.85) {
            b.set_kyc(id);
        }
    }
    for _ in 0..config.steps {
        b.step();
    }

    Scenario {
        name: format!("generated-{seed}"),
        seed,
        fee_model: b.fee_model,
        fiat_rates: vec![FiatRate::new("TRY", 3_450).expect("valid rate")],
        default_rule: Some(default_rule),
        jurisdiction_rules,
        commands: b.commands,
    }
}
