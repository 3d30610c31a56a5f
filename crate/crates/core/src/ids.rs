use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Prefix reserved for accounts the engine creates itself (campaign escrow).
pub const SYSTEM_PREFIX: char = '@';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid identifier {0:?}")]
pub struct InvalidId(pub String);

/// Opaque account identifier. Ordering is byte-wise, which every
/// deterministic tie-break in the engine relies on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct AccountId(String);

impl AccountId {
    pub fn new(id: impl Into<String>) -> Result<Self, InvalidId> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_control) {
            return Err(InvalidId(id));
        }
        Ok(AccountId(id))
    }

    pub(crate) fn system(id: String) -> Self {
        debug_assert!(id.starts_with(SYSTEM_PREFIX));
        AccountId(id)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_system(&self) -> bool {
        self.0.starts_with(SYSTEM_PREFIX)
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for AccountId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        AccountId::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Campaign identifier chosen by the campaign creator.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct CampaignId(String);

impl CampaignId {
    pub fn new(id: impl Into<String>) -> Result<Self, InvalidId> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_control) {
            return Err(InvalidId(id));
        }
        Ok(CampaignId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn escrow_account(&self) -> AccountId {
        AccountId::system(format!("{SYSTEM_PREFIX}escrow/{}", self.0))
    }
}

impl fmt::Display for CampaignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CampaignId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        CampaignId::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Logical clock value in integer seconds.
pub type Timestamp = u64;
