//! Fixtures and independent reference models shared by the integration
//! tests and the acceptance harness. The models are written from the
//! behavioral rules alone and share no code with the engine.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use stablefund_core::campaign::CampaignParams;
use stablefund_core::compliance::{Jurisdiction, KycStatus};
use stablefund_core::market::Side;
use stablefund_core::{AccountId, Amount, Bps, CampaignId, Engine};

pub const COIN: u64 = 1_000_000;

pub fn acct(id: &str) -> AccountId {
    AccountId::new(id).unwrap()
}

pub fn cid(id: &str) -> CampaignId {
    CampaignId::new(id).unwrap()
}

pub fn coins(n: u64) -> Amount {
    Amount::from_minor(n * COIN)
}

pub fn minor(n: u64) -> Amount {
    Amount::from_minor(n)
}

pub fn bps(n: u64) -> Bps {
    Bps::new(n).unwrap()
}

/// Exact `floor(a * b / c)` via big rationals.
pub fn rational_floor(a: u64, b: u64, c: u64) -> u64 {
    let q = BigRational::new(BigInt::from(a) * BigInt::from(b), BigInt::from(c));
    q.floor().to_integer().to_u64().unwrap()
}

/// Engine with verified accounts, each minted `cash` coins.
pub fn engine_with(accounts: &[&str], cash: u64) -> Engine {
    let mut e = Engine::new();
    for id in accounts {
        let a = e.create_account(id).unwrap();
        if cash > 0 {
            e.mint(&a, coins(cash)).unwrap();
        }
        e.set_kyc_status(&a, KycStatus::Verified, Jurisdiction::new("DE").unwrap())
            .unwrap();
    }
    e
}

pub struct CampaignSpec<'a> {
    pub id: &'a str,
    pub owner: &'a str,
    pub goal: Amount,
    pub deadline: u64,
    pub milestones: &'a [u64],
    pub validators: &'a [&'a str],
    pub required: usize,
    pub fee_bps: u64,
    pub fee_sink: &'a str,
}

impl CampaignSpec<'_> {
    pub fn params(&self) -> CampaignParams {
        CampaignParams {
            id: cid(self.id),
            owner: acct(self.owner),
            goal: self.goal,
            deadline: self.deadline,
            milestone_bps: self.milestones.iter().map(|&b| bps(b)).collect(),
            fee_bps: bps(self.fee_bps),
            fee_sink: acct(self.fee_sink),
            validators: self.validators.iter().map(|v| acct(v)).collect(),
            required_approvals: self.required,
        }
    }
}

pub fn simple_campaign<'a>(id: &'a str, goal: Amount, deadline: u64) -> CampaignSpec<'a> {
    CampaignSpec {
        id,
        owner: "owner",
        goal,
        deadline,
        milestones: &[5_000, 5_000],
        validators: &["v1", "v2", "v3"],
        required: 2,
        fee_bps: 0,
        fee_sink: "sink",
    }
}

/// Standard cast: owner, fee sink, three validators and the given backers.
pub fn crowd(backers: &[&str], cash: u64) -> Engine {
    let mut ids = vec!["owner", "sink", "v1", "v2", "v3"];
    ids.extend_from_slice(backers);
    let mut e = engine_with(&ids, 0);
    for b in backers {
        e.mint(&acct(b), coins(cash)).unwrap();
    }
    e
}

// ---- allocation oracle ------------------------------------------------------

/// Brute-force largest remainder: enumerate every way of handing the
/// leftover units to distinct holders, keep the assignment minimizing
/// Σ |a_i - q_i|, and break ties by the lexicographically smallest sorted
/// list of receiving account ids.
pub fn brute_force_allocation(contributions: &[(AccountId, u64)], supply: u64) -> BTreeMap<AccountId, u64> {
    let mut holders: Vec<(AccountId, u64)> = contributions.iter().filter(|(_, c)| *c > 0).cloned().collect();
    holders.sort();
    let total: u128 = holders.iter().map(|(_, c)| u128::from(*c)).sum();
    if total == 0 {
        return BTreeMap::new();
    }
    let n = holders.len();
    // quota_i = floor_i + rem_i / total
    let floors: Vec<u128> = holders.iter().map(|(_, c)| u128::from(supply) * u128::from(*c) / total).collect();
    let rems: Vec<u128> = holders.iter().map(|(_, c)| u128::from(supply) * u128::from(*c) % total).collect();
    let k = (u128::from(supply) - floors.iter().sum::<u128>()) as u32;
    assert!((k as usize) <= n);

    // Σ|a - q| over a set S of rounded-up holders, scaled by `total`:
    // Σ_{i∈S} (total - rem_i) + Σ_{i∉S} rem_i.
    let cost = |mask: u64| -> u128 {
        (0..n)
            .map(|i| if mask >> i & 1 == 1 { total - rems[i] } else { rems[i] })
            .sum()
    };
    let ids_of = |mask: u64| -> Vec<&AccountId> { (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &holders[i].0).collect() };

    let mut best: Option<(u128, u64)> = None;
    let mut visit = |mask: u64| {
        let c = cost(mask);
        let better = match best {
            None => true,
            Some((bc, bm)) => c < bc || (c == bc && ids_of(mask) < ids_of(bm)),
        };
        if better {
            best = Some((c, mask));
        }
    };
    if k == 0 {
        visit(0);
    } else {
        // Gosper's hack over all n-bit masks with k bits set.
        let limit = 1u64 << n;
        let mut mask = (1u64 << k) - 1;
        while mask < limit {
            visit(mask);
            let c = mask & mask.wrapping_neg();
            let r = mask + c;
            mask = (((r ^ mask) >> 2) / c) | r;
        }
    }
    let (_, mask) = best.unwrap();
    holders
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.clone(), (floors[i] + u128::from(mask >> i & 1)) as u64))
        .collect()
}

/// `|holding - supply * c / total| < 1`, checked exactly.
pub fn within_one_unit(holding: u64, contribution: u64, total: u64, supply: u64) -> bool {
    let quota = BigRational::new(BigInt::from(supply) * BigInt::from(contribution), BigInt::from(total));
    let diff = BigRational::from_integer(BigInt::from(holding)) - quota;
    let abs = if diff < BigRational::zero() { -diff } else { diff };
    abs < BigRational::from_integer(BigInt::from(1))
}

// ---- naive matcher ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaiveOrder {
    pub id: u64,
    pub side: Side,
    pub price: u64,
    pub placed_at: u64,
    pub remaining: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NaiveTrade {
    pub buy_id: u64,
    pub sell_id: u64,
    pub quantity: u64,
    pub price: u64,
}

/// `(price, quantity)` per price level.
pub type Levels = Vec<(u64, u64)>;

/// Keeps every resting order in one flat list and rescans all of it for
/// each fill.
#[derive(Debug, Default)]
pub struct NaiveMatcher {
    pub resting: Vec<NaiveOrder>,
    pub trades: Vec<NaiveTrade>,
}

impl NaiveMatcher {
    pub fn place(&mut self, mut order: NaiveOrder) {
        loop {
            if order.remaining == 0 {
                return;
            }
            let mut best: Option<usize> = None;
            for (i, r) in self.resting.iter().enumerate() {
                let crosses = match order.side {
                    Side::Buy => r.side == Side::Sell && r.price <= order.price,
                    Side::Sell => r.side == Side::Buy && r.price >= order.price,
                };
                if !crosses {
                    continue;
                }
                best = match best {
                    None => Some(i),
                    Some(j) => {
                        let b = &self.resting[j];
                        let price_better = match order.side {
                            Side::Buy => r.price < b.price,
                            Side::Sell => r.price > b.price,
                        };
                        let earlier = r.price == b.price && (r.placed_at, r.id) < (b.placed_at, b.id);
                        if price_better || earlier {
                            Some(i)
                        } else {
                            Some(j)
                        }
                    }
                };
            }
            let Some(i) = best else { break };
            let q = order.remaining.min(self.resting[i].remaining);
            let (buy_id, sell_id) = match order.side {
                Side::Buy => (order.id, self.resting[i].id),
                Side::Sell => (self.resting[i].id, order.id),
            };
            self.trades.push(NaiveTrade {
                buy_id,
                sell_id,
                quantity: q,
                price: self.resting[i].price,
            });
            order.remaining -= q;
            self.resting[i].remaining -= q;
            if self.resting[i].remaining == 0 {
                self.resting.remove(i);
            }
        }
        self.resting.push(order);
    }

    pub fn cancel(&mut self, id: u64) -> bool {
        let before = self.resting.len();
        self.resting.retain(|o| o.id != id);
        before != self.resting.len()
    }

    /// Aggregated `(price, quantity)` levels: bids descending, asks ascending.
    pub fn levels(&self) -> (Levels, Levels) {
        let mut bids: BTreeMap<u64, u64> = BTreeMap::new();
        let mut asks: BTreeMap<u64, u64> = BTreeMap::new();
        for o in &self.resting {
            let side = if o.side == Side::Buy { &mut bids } else { &mut asks };
            *side.entry(o.price).or_default() += o.remaining;
        }
        (bids.into_iter().rev().collect(), asks.into_iter().collect())
    }
}

// ---- refund contract model ------------------------------------------------

/// The reference refund contract: a deadline guard, then read, zero and
/// pay the caller's recorded contribution.
#[derive(Debug, Default)]
pub struct RefundContract {
    pub deadline: u64,
    pub contributions: BTreeMap<AccountId, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefundOutcome {
    Reverted(&'static str),
    Paid(u64),
}

impl RefundContract {
    pub fn contribute(&mut self, who: &AccountId, net: u64) {
        *self.contributions.entry(who.clone()).or_default() += net;
    }

    pub fn refund(&mut self, now: u64, who: &AccountId) -> RefundOutcome {
        if now < self.deadline {
            return RefundOutcome::Reverted("Funding period still active");
        }
        let amount = self.contributions.get(who).copied().unwrap_or(0);
        self.contributions.insert(who.clone(), 0);
        RefundOutcome::Paid(amount)
    }
}

// ---- milestone model --------------------------------------------------------

/// M-of-N approvals per milestone, strictly in-order releases.
#[derive(Debug)]
pub struct MilestoneModel {
    pub validators: BTreeSet<AccountId>,
    pub required: usize,
    pub approvals: Vec<BTreeSet<AccountId>>,
    pub disbursed: Vec<bool>,
}

impl MilestoneModel {
    pub fn new(validators: &[AccountId], required: usize, milestones: usize) -> Self {
        MilestoneModel {
            validators: validators.iter().cloned().collect(),
            required,
            approvals: vec![BTreeSet::new(); milestones],
            disbursed: vec![false; milestones],
        }
    }

    fn open(&self, index: usize) -> bool {
        index < self.disbursed.len() && !self.disbursed[index] && self.disbursed[..index].iter().all(|&d| d)
    }

    /// Whether the approval is accepted.
    pub fn approve(&mut self, index: usize, validator: &AccountId) -> bool {
        if !self.open(index) || !self.validators.contains(validator) {
            return false;
        }
        self.approvals[index].insert(validator.clone());
        true
    }

    /// Whether the release goes through.
    pub fn disburse(&mut self, index: usize) -> bool {
        if !self.open(index) || self.approvals[index].len() < self.required {
            return false;
        }
        self.disbursed[index] = true;
        true
    }

    pub fn completed(&self) -> bool {
        self.disbursed.iter().all(|&d| d)
    }
}
