//! Campaign lifecycle: funding window, goal evaluation, escrow accounting,
//! refunds and milestone-gated M-of-N disbursement.
//!
//! A [`Campaign`] holds only bookkeeping. Moving coins in and out of the
//! escrow account is the engine's job; the methods here either validate
//! (`plan_*`, `&self`) or record an already validated effect.
//!
//! ```text
//!            finalize, raised >= goal          last milestone disbursed
//!   Active ─────────────────────────▶ Funded ───────────────────────▶ Completed
//!      │
//!      └──────────────────────────▶ Failed   (refunds only)
//!            finalize, raised < goal
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::amount::{Amount, Bps, BPS_DENOMINATOR};
use crate::ids::{AccountId, CampaignId, Timestamp};

/// Revert message of the deadline guard, kept verbatim.
pub const FUNDING_STILL_ACTIVE: &str = "Funding period still active";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CampaignError {
    #[error("campaign {0} already exists")]
    DuplicateCampaign(CampaignId),
    #[error("unknown campaign {0}")]
    UnknownCampaign(CampaignId),
    #[error("milestone release fractions must be non-empty and sum to 10000 bps")]
    BadMilestoneSchedule,
    #[error("validator set must be distinct with N >= M >= 1")]
    BadValidatorSet,
    #[error("deadline {deadline} is not after now ({now})")]
    PastDeadline { deadline: Timestamp, now: Timestamp },
    #[error("goal must be positive")]
    ZeroGoal,
    #[error("campaign is not accepting contributions")]
    CampaignNotActive,
    #[error("funding deadline has passed")]
    DeadlinePassed,
    #[error("campaign cannot be finalized before its deadline")]
    TooEarly,
    #[error("campaign already finalized")]
    AlreadyFinalized,
    #[error("{}", FUNDING_STILL_ACTIVE)]
    FundingStillActive,
    #[error("refunds are only available on failed campaigns")]
    CampaignNotFailed,
    #[error("nothing to refund")]
    NothingToRefund,
    #[error("campaign is not funded")]
    NotFunded,
    #[error("unknown milestone {0}")]
    UnknownMilestone(usize),
    #[error("{0} is not a validator for this campaign")]
    NotValidator(AccountId),
    #[error("earlier milestones must be disbursed first")]
    OutOfOrder,
    #[error("milestone already disbursed")]
    AlreadyDisbursed,
    #[error("milestone lacks the required approvals")]
    NotApproved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CampaignState {
    Active,
    Funded,
    Failed,
    Completed,
}

impl CampaignState {
    pub fn as_str(self) -> &'static str {
        match self {
            CampaignState::Active => "Active",
            CampaignState::Funded => "Funded",
            CampaignState::Failed => "Failed",
            CampaignState::Completed => "Completed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MilestoneStatus {
    Pending,
    Approved,
    Disbursed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Milestone {
    pub index: usize,
    pub release_bps: Bps,
    pub required_approvals: usize,
    pub validators: BTreeSet<AccountId>,
    pub approvals: BTreeSet<AccountId>,
    pub status: MilestoneStatus,
    pub released: Amount,
}

/// Everything needed to open a campaign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignParams {
    pub id: CampaignId,
    pub owner: AccountId,
    pub goal: Amount,
    pub deadline: Timestamp,
    pub milestone_bps: Vec<Bps>,
    pub fee_bps: Bps,
    pub fee_sink: AccountId,
    pub validators: Vec<AccountId>,
    pub required_approvals: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Campaign {
    pub id: CampaignId,
    pub owner: AccountId,
    pub escrow_account: AccountId,
    pub goal: Amount,
    pub deadline: Timestamp,
    pub state: CampaignState,
    pub fee_bps: Bps,
    pub fee_sink: AccountId,
    /// Net contribution per backer; zeroed by refund.
    pub contributions: BTreeMap<AccountId, Amount>,
    pub escrow_balance: Amount,
    /// Cumulative net inflow, never decreased.
    pub total_raised: Amount,
    pub total_refunded: Amount,
    pub total_disbursed: Amount,
    pub milestones: Vec<Milestone>,
}

impl Campaign {
    pub fn new(params: CampaignParams, now: Timestamp) -> Result<Self, CampaignError> {
        if params.goal.is_zero() {
            return Err(CampaignError::ZeroGoal);
        }
        if params.deadline <= now {
            return Err(CampaignError::PastDeadline {
                deadline: params.deadline,
                now,
            });
        }
        let bps_total: u64 = params.milestone_bps.iter().map(|b| b.value()).sum();
        if params.milestone_bps.is_empty() || bps_total != BPS_DENOMINATOR {
            return Err(CampaignError::BadMilestoneSchedule);
        }
        let validators: BTreeSet<AccountId> = params.validators.iter().cloned().collect();
        if validators.len() != params.validators.len()
            || params.required_approvals == 0
            || params.required_approvals > validators.len()
        {
            return Err(CampaignError::BadValidatorSet);
        }
        let milestones = params
            .milestone_bps
            .iter()
            .enumerate()
            .map(|(index, &release_bps)| Milestone {
                index,
                release_bps,
                required_approvals: params.required_approvals,
                validators: validators.clone(),
                approvals: BTreeSet::new(),
                status: MilestoneStatus::Pending,
                released: Amount::ZERO,
            })
            .collect();
        Ok(Campaign {
            escrow_account: params.id.escrow_account(),
            id: params.id,
            owner: params.owner,
            goal: params.goal,
            deadline: params.deadline,
            state: CampaignState::Active,
            fee_bps: params.fee_bps,
            fee_sink: params.fee_sink,
            contributions: BTreeMap::new(),
            escrow_balance: Amount::ZERO,
            total_raised: Amount::ZERO,
            total_refunded: Amount::ZERO,
            total_disbursed: Amount::ZERO,
            milestones,
        })
    }

    pub fn contribution_of(&self, who: &AccountId) -> Amount {
        self.contributions.get(who).copied().unwrap_or(Amount::ZERO)
    }

    /// Σ current contributions.
    pub fn raised(&self) -> Amount {
        self.contributions
            .values()
            .fold(Amount::ZERO, |acc, a| acc.checked_add(*a).expect("bounded by supply"))
    }

    pub fn ensure_accepting(&self, now: Timestamp) -> Result<(), CampaignError> {
        if self.state != CampaignState::Active {
            return Err(CampaignError::CampaignNotActive);
        }
        if now >= self.deadline {
            return Err(CampaignError::DeadlinePassed);
        }
        Ok(())
    }

    pub(crate) fn record_contribution(&mut self, who: &AccountId, net: Amount) -> Amount {
        let total = self.contribution_of(who).checked_add(net).expect("bounded by supply");
        self.contributions.insert(who.clone(), total);
        self.escrow_balance = self.escrow_balance.checked_add(net).expect("bounded by supply");
        self.total_raised = self.total_raised.checked_add(net).expect("bounded by supply");
        total
    }

    /// Active → Funded when Σ contributions ≥ goal, otherwise Active → Failed.
    pub fn finalize(&mut self, now: Timestamp) -> Result<CampaignState, CampaignError> {
        if self.state != CampaignState::Active {
            return Err(CampaignError::AlreadyFinalized);
        }
        if now < self.deadline {
            return Err(CampaignError::TooEarly);
        }
        self.state = if self.raised() >= self.goal {
            CampaignState::Funded
        } else {
            CampaignState::Failed
        };
        Ok(self.state)
    }

    /// The deadline guard comes first, as in the reference contract.
    pub fn plan_refund(&self, who: &AccountId, now: Timestamp) -> Result<Amount, CampaignError> {
        if now < self.deadline {
            return Err(CampaignError::FundingStillActive);
        }
        if self.state != CampaignState::Failed {
            return Err(CampaignError::CampaignNotFailed);
        }
        let amount = self.contribution_of(who);
        if amount.is_zero() {
            return Err(CampaignError::NothingToRefund);
        }
        Ok(amount)
    }

    /// Zeroes the caller's contribution before any coins move.
    pub(crate) fn clear_contribution(&mut self, who: &AccountId) -> Amount {
        let amount = self.contribution_of(who);
        self.contributions.insert(who.clone(), Amount::ZERO);
        self.escrow_balance = self.escrow_balance.checked_sub(amount).expect("escrow covers refund");
        self.total_refunded = self.total_refunded.checked_add(amount).expect("bounded by supply");
        amount
    }

    fn milestone(&self, index: usize) -> Result<&Milestone, CampaignError> {
        self.milestones.get(index).ok_or(CampaignError::UnknownMilestone(index))
    }

    fn ensure_funded(&self) -> Result<(), CampaignError> {
        match self.state {
            CampaignState::Funded => Ok(()),
            CampaignState::Completed => Err(CampaignError::AlreadyDisbursed),
            _ => Err(CampaignError::NotFunded),
        }
    }

    fn priors_disbursed(&self, index: usize) -> bool {
        self.milestones[..index]
            .iter()
            .all(|m| m.status == MilestoneStatus::Disbursed)
    }

    /// Validates an approval; returns the approval count it would produce.
    pub fn plan_approval(&self, index: usize, validator: &AccountId) -> Result<usize, CampaignError> {
        let milestone = self.milestone(index)?;
        self.ensure_funded()?;
        if milestone.status == MilestoneStatus::Disbursed {
            return Err(CampaignError::AlreadyDisbursed);
        }
        if !milestone.validators.contains(validator) {
            return Err(CampaignError::NotValidator(validator.clone()));
        }
        if !self.priors_disbursed(index) {
            return Err(CampaignError::OutOfOrder);
        }
        let already = milestone.approvals.contains(validator);
        Ok(milestone.approvals.len() + usize::from(!already))
    }

    pub fn approve(&mut self, index: usize, validator: &AccountId) -> Result<usize, CampaignError> {
        self.plan_approval(index, validator)?;
        let milestone = &mut self.milestones[index];
        milestone.approvals.insert(validator.clone());
        if milestone.approvals.len() >= milestone.required_approvals {
            milestone.status = MilestoneStatus::Approved;
        }
        Ok(milestone.approvals.len())
    }

    /// Amount a disbursement would release. Every milestone but the last
    /// releases `floor(total_raised * bps / 10_000)`; the last drains what
    /// is left so the escrow always ends at exactly zero.
    pub fn plan_disbursement(&self, index: usize) -> Result<Amount, CampaignError> {
        let milestone = self.milestone(index)?;
        self.ensure_funded()?;
        if milestone.status == MilestoneStatus::Disbursed {
            return Err(CampaignError::AlreadyDisbursed);
        }
        if !self.priors_disbursed(index) {
            return Err(CampaignError::OutOfOrder);
        }
        if milestone.status != MilestoneStatus::Approved {
            return Err(CampaignError::NotApproved);
        }
        if index + 1 == self.milestones.len() {
            Ok(self.escrow_balance)
        } else {
            Ok(self.total_raised.apply_bps(milestone.release_bps))
        }
    }

    pub(crate) fn record_disbursement(&mut self, index: usize, amount: Amount) {
        let milestone = &mut self.milestones[index];
        milestone.status = MilestoneStatus::Disbursed;
        milestone.released = amount;
        self.escrow_balance = self.escrow_balance.checked_sub(amount).expect("planned release");
        self.total_disbursed = self.total_disbursed.checked_add(amount).expect("bounded by supply");
        if index + 1 == self.milestones.len() {
            self.state = CampaignState::Completed;
        }
    }

    /// `escrow = raised - disbursed - refunded`, exactly.
    pub fn escrow_identity_holds(&self) -> bool {
        let out = u128::from(self.total_disbursed.minor_units()) + u128::from(self.total_refunded.minor_units());
        u128::from(self.total_raised.minor_units()) == out + u128::from(self.escrow_balance.minor_units())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> AccountId {
        AccountId::new(s).unwrap()
    }

    fn bps(v: &[u64]) -> Vec<Bps> {
        v.iter().map(|&b| Bps::new(b).unwrap()).collect()
    }

    fn params(milestones: &[u64], m: usize, n: usize) -> CampaignParams {
        CampaignParams {
            id: CampaignId::new("c1").unwrap(),
            owner: id("owner"),
            goal: Amount::from_minor(1_000_000),
            deadline: 100,
            milestone_bps: bps(milestones),
            fee_bps: Bps::ZERO,
            fee_sink: id("fees"),
            validators: (0..n).map(|i| id(&format!("v{i}"))).collect(),
            required_approvals: m,
        }
    }

    fn funded(milestones: &[u64], raised: u64) -> Campaign {
        let mut c = Campaign::new(params(milestones, 2, 3), 0).unwrap();
        c.goal = Amount::from_minor(raised.clamp(1, 1_000_000));
        c.record_contribution(&id("alice"), Amount::from_minor(raised));
        assert_eq!(c.finalize(100), Ok(CampaignState::Funded));
        c
    }

    fn approve_and_disburse(c: &mut Campaign, index: usize) -> Amount {
        c.approve(index, &id("v0")).unwrap();
        c.approve(index, &id("v1")).unwrap();
        let amount = c.plan_disbursement(index).unwrap();
        c.record_disbursement(index, amount);
        amount
    }

    #[test]
    fn creation_validation() {
        assert_eq!(Campaign::new(params(&[5000, 5000], 2, 3), 0).unwrap().state, CampaignState::Active);
        assert_eq!(
            Campaign::new(params(&[6000, 5000], 2, 3), 0),
            Err(CampaignError::BadMilestoneSchedule)
        );
        assert_eq!(Campaign::new(params(&[], 1, 1), 0), Err(CampaignError::BadMilestoneSchedule));
        assert_eq!(Campaign::new(params(&[10_000], 4, 3), 0), Err(CampaignError::BadValidatorSet));
        assert_eq!(Campaign::new(params(&[10_000], 0, 3), 0), Err(CampaignError::BadValidatorSet));
        assert_eq!(
            Campaign::new(params(&[10_000], 1, 1), 100),
            Err(CampaignError::PastDeadline { deadline: 100, now: 100 })
        );
        let mut dup = params(&[10_000], 1, 2);
        dup.validators[1] = dup.validators[0].clone();
        assert_eq!(Campaign::new(dup, 0), Err(CampaignError::BadValidatorSet));
    }

    #[test]
    fn finalize_goal_boundary() {
        for (raised, expected) in [(1_000_000, CampaignState::Funded), (999_999, CampaignState::Failed)] {
            let mut c = Campaign::new(params(&[10_000], 1, 1), 0).unwrap();
            c.record_contribution(&id("a"), Amount::from_minor(raised));
            assert_eq!(c.finalize(99), Err(CampaignError::TooEarly));
            assert_eq!(c.finalize(100), Ok(expected));
            assert_eq!(c.finalize(101), Err(CampaignError::AlreadyFinalized));
        }
    }

    #[test]
    fn refund_guards() {
        let mut c = Campaign::new(params(&[10_000], 1, 1), 0).unwrap();
        c.record_contribution(&id("a"), Amount::from_minor(500_000));
        assert_eq!(c.plan_refund(&id("a"), 99), Err(CampaignError::FundingStillActive));
        assert_eq!(CampaignError::FundingStillActive.to_string(), "Funding period still active");
        assert_eq!(c.plan_refund(&id("a"), 100), Err(CampaignError::CampaignNotFailed));
        c.finalize(100).unwrap();
        assert_eq!(c.plan_refund(&id("a"), 100), Ok(Amount::from_minor(500_000)));
        assert_eq!(c.clear_contribution(&id("a")), Amount::from_minor(500_000));
        assert_eq!(c.contribution_of(&id("a")), Amount::ZERO);
        assert_eq!(c.plan_refund(&id("a"), 100), Err(CampaignError::NothingToRefund));
        assert!(c.escrow_identity_holds());
    }

    #[test]
    fn approvals_are_a_set() {
        let mut c = funded(&[5000, 5000], 1_000_000);
        assert_eq!(c.approve(0, &id("v0")), Ok(1));
        assert_eq!(c.milestones[0].status, MilestoneStatus::Pending);
        assert_eq!(c.approve(0, &id("v0")), Ok(1));
        assert_eq!(c.approve(0, &id("v1")), Ok(2));
        assert_eq!(c.milestones[0].status, MilestoneStatus::Approved);
        assert_eq!(c.approve(0, &id("mallory")), Err(CampaignError::NotValidator(id("mallory"))));
        assert_eq!(c.approve(1, &id("v0")), Err(CampaignError::OutOfOrder));
    }

    #[test]
    fn even_split_drains_escrow() {
        let mut c = funded(&[5000, 5000], 1_000_000);
        assert_eq!(approve_and_disburse(&mut c, 0), Amount::from_minor(500_000));
        assert_eq!(approve_and_disburse(&mut c, 1), Amount::from_minor(500_000));
        assert_eq!(c.escrow_balance, Amount::ZERO);
        assert_eq!(c.state, CampaignState::Completed);
        assert_eq!(c.plan_disbursement(1), Err(CampaignError::AlreadyDisbursed));
    }

    #[test]
    fn last_milestone_absorbs_dust() {
        let mut c = funded(&[3333, 3333, 3334], 999_999);
        let released: Vec<u64> = (0..3).map(|i| approve_and_disburse(&mut c, i).minor_units()).collect();
        assert_eq!(released, [333_299, 333_299, 333_401]);
        assert_eq!(released.iter().sum::<u64>(), 999_999);
        assert!(c.escrow_identity_holds());
    }

    #[test]
    fn disbursement_order_and_threshold() {
        let mut c = funded(&[5000, 5000], 1_000_000);
        assert_eq!(c.plan_disbursement(1), Err(CampaignError::OutOfOrder));
        assert_eq!(c.plan_disbursement(0), Err(CampaignError::NotApproved));
        c.approve(0, &id("v2")).unwrap();
        assert_eq!(c.plan_disbursement(0), Err(CampaignError::NotApproved));
        assert_eq!(c.plan_disbursement(7), Err(CampaignError::UnknownMilestone(7)));
    }

    #[test]
    fn failed_campaign_cannot_disburse() {
        let mut c = Campaign::new(params(&[10_000], 1, 1), 0).unwrap();
        c.finalize(100).unwrap();
        assert_eq!(c.plan_approval(0, &id("v0")), Err(CampaignError::NotFunded));
        assert_eq!(c.plan_disbursement(0), Err(CampaignError::NotFunded));
    }
}
