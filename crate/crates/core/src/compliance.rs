//! KYC/AML identity registry and the participation gate.
//!
//! The gate is a pure function of the registry, so it can be re-evaluated
//! from the event log alone: [`audit_gate`] rebuilds the registry from
//! `RULE` and `KYC` records and re-checks every gated event.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::amount::Amount;
use crate::event::{EventKind, EventRecord, Payload};
use crate::ids::{AccountId, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComplianceError {
    #[error("illegal KYC transition {from:?} -> {to:?}")]
    IllegalTransition { from: KycStatus, to: KycStatus },
    #[error("report window start {from} is after end {to}")]
    InvalidWindow { from: Timestamp, to: Timestamp },
    #[error("invalid jurisdiction code {0:?}")]
    InvalidJurisdiction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KycStatus {
    Unverified,
    Verified,
    Barred,
}

impl KycStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            KycStatus::Unverified => "Unverified",
            KycStatus::Verified => "Verified",
            KycStatus::Barred => "Barred",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "Unverified" => Some(KycStatus::Unverified),
            "Verified" => Some(KycStatus::Verified),
            "Barred" => Some(KycStatus::Barred),
            _ => None,
        }
    }

    /// Unverified may be re-registered (to record a jurisdiction); otherwise
    /// only Unverified→Verified, Unverified→Barred and Verified→Barred.
    pub fn can_become(self, next: KycStatus) -> bool {
        use KycStatus::*;
        matches!(
            (self, next),
            (Unverified, Unverified) | (Unverified, Verified) | (Unverified, Barred) | (Verified, Barred)
        )
    }
}

/// ISO-3166 style two-letter country code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Jurisdiction(String);

impl Jurisdiction {
    pub fn new(code: &str) -> Result<Self, ComplianceError> {
        if code.len() == 2 && code.bytes().all(|b| b.is_ascii_uppercase()) {
            Ok(Jurisdiction(code.to_string()))
        } else {
            Err(ComplianceError::InvalidJurisdiction(code.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Jurisdiction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Jurisdiction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Jurisdiction::new(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdentityRecord {
    pub account: AccountId,
    pub status: KycStatus,
    pub jurisdiction: Option<Jurisdiction>,
    pub verified_at: Option<Timestamp>,
}

impl IdentityRecord {
    fn unverified(account: AccountId) -> Self {
        IdentityRecord {
            account,
            status: KycStatus::Unverified,
            jurisdiction: None,
            verified_at: None,
        }
    }
}

/// Limits applied to one jurisdiction (or to the default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulePolicy {
    /// Largest single contribution an unverified account may make; zero
    /// means KYC is always required.
    pub max_unverified_contribution: Amount,
    pub allowed: bool,
}

impl Default for RulePolicy {
    fn default() -> Self {
        RulePolicy {
            max_unverified_contribution: Amount::ZERO,
            allowed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JurisdictionRule {
    pub jurisdiction: Jurisdiction,
    pub max_unverified_contribution: Amount,
    pub allowed: bool,
}

impl JurisdictionRule {
    pub fn policy(&self) -> RulePolicy {
        RulePolicy {
            max_unverified_contribution: self.max_unverified_contribution,
            allowed: self.allowed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateAction {
    CreateCampaign,
    Contribute(Amount),
    /// Secondary-market order; evaluated exactly like a contribution of
    /// the order's notional value.
    Trade(Amount),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DenyReason {
    Barred,
    JurisdictionBlocked,
    KycRequired,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenyReason::Barred => "Barred",
            DenyReason::JurisdictionBlocked => "JurisdictionBlocked",
            DenyReason::KycRequired => "KycRequired",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Allow,
    Deny(DenyReason),
}

impl GateDecision {
    pub fn is_allowed(self) -> bool {
        self == GateDecision::Allow
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    identities: BTreeMap<AccountId, IdentityRecord>,
    rules: BTreeMap<Jurisdiction, RulePolicy>,
    default_rule: RulePolicy,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn default_rule(&self) -> RulePolicy {
        self.default_rule
    }

    pub fn set_default_rule(&mut self, policy: RulePolicy) {
        self.default_rule = policy;
    }

    pub fn set_rule(&mut self, rule: &JurisdictionRule) {
        self.rules.insert(rule.jurisdiction.clone(), rule.policy());
    }

    pub fn rules(&self) -> impl Iterator<Item = (&Jurisdiction, &RulePolicy)> {
        self.rules.iter()
    }

    pub fn identity(&self, account: &AccountId) -> IdentityRecord {
        self.identities
            .get(account)
            .cloned()
            .unwrap_or_else(|| IdentityRecord::unverified(account.clone()))
    }

    pub fn identities(&self) -> impl Iterator<Item = &IdentityRecord> {
        self.identities.values()
    }

    fn policy_for(&self, jurisdiction: Option<&Jurisdiction>) -> RulePolicy {
        jurisdiction
            .and_then(|j| self.rules.get(j))
            .copied()
            .unwrap_or(self.default_rule)
    }

    /// Validates a status change without applying it.
    pub fn plan_status(
        &self,
        account: &AccountId,
        status: KycStatus,
        jurisdiction: Jurisdiction,
        now: Timestamp,
    ) -> Result<IdentityRecord, ComplianceError> {
        let current = self.identity(account);
        if !current.status.can_become(status) {
            return Err(ComplianceError::IllegalTransition {
                from: current.status,
                to: status,
            });
        }
        let verified_at = match status {
            KycStatus::Verified => Some(now),
            _ => current.verified_at,
        };
        Ok(IdentityRecord {
            account: account.clone(),
            status,
            jurisdiction: Some(jurisdiction),
            verified_at,
        })
    }

    pub fn set_status(
        &mut self,
        account: &AccountId,
        status: KycStatus,
        jurisdiction: Jurisdiction,
        now: Timestamp,
    ) -> Result<IdentityRecord, ComplianceError> {
        let record = self.plan_status(account, status, jurisdiction, now)?;
        self.identities.insert(account.clone(), record.clone());
        Ok(record)
    }

    pub fn check_gate(&self, account: &AccountId, action: GateAction) -> GateDecision {
        let identity = self.identities.get(account);
        let status = identity.map_or(KycStatus::Unverified, |r| r.status);
        let policy = self.policy_for(identity.and_then(|r| r.jurisdiction.as_ref()));
        if status == KycStatus::Barred {
            return GateDecision::Deny(DenyReason::Barred);
        }
        if !policy.allowed {
            return GateDecision::Deny(DenyReason::JurisdictionBlocked);
        }
        if status == KycStatus::Unverified {
            let permitted = match action {
                GateAction::CreateCampaign => false,
                GateAction::Contribute(amount) | GateAction::Trade(amount) => {
                    amount <= policy.max_unverified_contribution
                }
            };
            if !permitted {
                return GateDecision::Deny(DenyReason::KycRequired);
            }
        }
        GateDecision::Allow
    }

    /// Applies a `RULE` or `KYC` record; other kinds are ignored.
    pub fn apply_event(&mut self, record: &EventRecord) {
        match record.kind {
            EventKind::Rule => {
                let p = &record.payload;
                let policy = RulePolicy {
                    max_unverified_contribution: Amount::from_minor(p.u64("max_unverified_contribution").unwrap_or(0)),
                    allowed: p.get("allowed").and_then(|v| v.as_bool()).unwrap_or(true),
                };
                match p.str("jurisdiction") {
                    Some(DEFAULT_RULE_KEY) | None => self.default_rule = policy,
                    Some(code) => {
                        if let Ok(j) = Jurisdiction::new(code) {
                            self.rules.insert(j, policy);
                        }
                    }
                }
            }
            EventKind::Kyc => {
                let p = &record.payload;
                let (Some(account), Some(status)) = (
                    p.str("account").and_then(|a| AccountId::new(a).ok()),
                    p.str("status").and_then(KycStatus::parse),
                ) else {
                    return;
                };
                let jurisdiction = p.str("jurisdiction").and_then(|j| Jurisdiction::new(j).ok());
                self.identities.insert(
                    account.clone(),
                    IdentityRecord {
                        account,
                        status,
                        jurisdiction,
                        verified_at: p.u64("verified_at"),
                    },
                );
            }
            _ => {}
        }
    }
}

/// `jurisdiction` value used by `RULE` events for the default policy.
pub const DEFAULT_RULE_KEY: &str = "*";

pub(crate) fn rule_payload(jurisdiction: &str, policy: RulePolicy) -> Payload {
    Payload::new()
        .with("jurisdiction", jurisdiction)
        .with("max_unverified_contribution", policy.max_unverified_contribution)
        .with("allowed", policy.allowed)
}

pub(crate) fn kyc_payload(record: &IdentityRecord) -> Payload {
    let mut payload = Payload::new()
        .with("account", &record.account)
        .with("status", record.status.as_str())
        .with("jurisdiction", record.jurisdiction.as_ref().map_or("", Jurisdiction::as_str));
    if let Some(at) = record.verified_at {
        payload = payload.with("verified_at", at);
    }
    payload
}

/// A gated action as it appears in the log: who did it, and for how much.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportEntry {
    pub seq: u64,
    pub account: String,
    pub kind: EventKind,
    pub amount: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComplianceReport {
    pub generated_at: Timestamp,
    pub window: [Timestamp; 2],
    pub entries: Vec<ReportEntry>,
}

impl ComplianceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

/// Extracts `(account, action)` from a gated record, if it is one.
pub fn gated_action(record: &EventRecord) -> Option<(String, GateAction, Amount)> {
    let p = &record.payload;
    match record.kind {
        EventKind::CreateCampaign => {
            let goal = Amount::from_minor(p.u64("goal")?);
            Some((p.str("owner")?.to_string(), GateAction::CreateCampaign, goal))
        }
        EventKind::Contribute => {
            let gross = Amount::from_minor(p.u64("gross")?);
            Some((p.str("contributor")?.to_string(), GateAction::Contribute(gross), gross))
        }
        EventKind::Order => {
            let notional = Amount::from_minor(p.u64("notional")?);
            Some((p.str("trader")?.to_string(), GateAction::Trade(notional), notional))
        }
        _ => None,
    }
}

/// Report of gated actions with `from <= timestamp <= to`. Pure in the log.
pub fn generate_report(
    records: &[EventRecord],
    from: Timestamp,
    to: Timestamp,
    generated_at: Timestamp,
) -> Result<ComplianceReport, ComplianceError> {
    if from > to {
        return Err(ComplianceError::InvalidWindow { from, to });
    }
    let entries = records
        .iter()
        .filter(|r| (from..=to).contains(&r.timestamp))
        .filter_map(|r| {
            gated_action(r).map(|(account, _, amount)| ReportEntry {
                seq: r.seq,
                account,
                kind: r.kind,
                amount,
            })
        })
        .collect();
    Ok(ComplianceReport {
        generated_at,
        window: [from, to],
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateViolation {
    pub seq: u64,
    pub account: String,
    pub reason: DenyReason,
}

/// Replays the log and returns every gated event the gate would have
/// denied given the compliance state recorded before it.
pub fn audit_gate(records: &[EventRecord]) -> Vec<GateViolation> {
    let mut registry = Registry::new();
    let mut violations = Vec::new();
    for record in records {
        registry.apply_event(record);
        if let Some((account, action, _)) = gated_action(record) {
            let decision = match AccountId::new(account.clone()) {
                Ok(id) => registry.check_gate(&id, action),
                Err(_) => GateDecision::Deny(DenyReason::KycRequired),
            };
            if let GateDecision::Deny(reason) = decision {
                violations.push(GateViolation {
                    seq: record.seq,
                    account,
                    reason,
                });
            }
        }
    }
    violations
}
