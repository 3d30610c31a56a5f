//! Per-campaign token classes and cap tables.
//!
//! Allocation is proportional to net contribution and exact: every holder
//! receives the floor of their quota `supply * c_i / raised`, and the
//! leftover units go one each to the largest fractional remainders
//! (Hamilton's method), ties broken by account id.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::Amount;
use crate::ids::{AccountId, CampaignId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("campaign is not funded")]
    NotFunded,
    #[error("no token class defined for campaign")]
    NoTokenClass,
    #[error("campaign already has a token class")]
    DuplicateTokenClass,
    #[error("tokens have not been allocated yet")]
    NoAllocation,
    #[error("tokens already allocated")]
    AlreadyAllocated,
    #[error("total supply must be positive")]
    ZeroSupply,
    #[error("token classes can only be defined while the campaign is active")]
    CampaignClosed,
    #[error("{holder} holds {available} free units, needs {needed}")]
    InsufficientTokens {
        holder: AccountId,
        available: u64,
        needed: u64,
    },
}

/// Label only; kinds carry no behavioral difference in the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Equity,
    Reward,
    Hybrid,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenKind::Equity => "Equity",
            TokenKind::Reward => "Reward",
            TokenKind::Hybrid => "Hybrid",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TokenClass {
    pub campaign_id: CampaignId,
    pub kind: TokenKind,
    pub total_supply: u64,
}

/// Largest-remainder apportionment of `supply` over `contributions`.
///
/// Zero contributions are skipped. Returns an empty map when nothing was
/// contributed. Exact: computed with 128-bit integers, never floats.
pub fn allocate_largest_remainder(
    contributions: &BTreeMap<AccountId, Amount>,
    supply: u64,
) -> BTreeMap<AccountId, u64> {
    let total: u128 = contributions.values().map(|a| u128::from(a.minor_units())).sum();
    if total == 0 {
        return BTreeMap::new();
    }
    let supply_wide = u128::from(supply);
    // (holder, floor(quota), remainder numerator over `total`)
    let mut shares: Vec<(&AccountId, u64, u128)> = contributions
        .iter()
        .filter(|(_, a)| !a.is_zero())
        .map(|(holder, amount)| {
            let scaled = supply_wide * u128::from(amount.minor_units());
            // scaled / total <= supply, so it fits in u64
            (holder, (scaled / total) as u64, scaled % total)
        })
        .collect();
    let floored: u64 = shares.iter().map(|s| s.1).sum();
    let leftover = (supply - floored) as usize;

    let mut ranking: Vec<usize> = (0..shares.len()).collect();
    // Remainders share the denominator, so numerators compare directly.
    // BTreeMap iteration already yields ids in byte order, and the sort is
    // stable, so equal remainders keep that order.
    ranking.sort_by(|&a, &b| shares[b].2.cmp(&shares[a].2));
    for &i in ranking.iter().take(leftover) {
        shares[i].1 += 1;
    }
    shares.into_iter().map(|(holder, units, _)| (holder.clone(), units)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Holding {
    pub units: u64,
    /// Units locked by open sell orders.
    pub reserved: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CapTable {
    pub class: TokenClass,
    pub allocated: bool,
    pub holdings: BTreeMap<AccountId, Holding>,
}

impl CapTable {
    pub fn new(class: TokenClass) -> Self {
        CapTable {
            class,
            allocated: false,
            holdings: BTreeMap::new(),
        }
    }

    pub fn allocate(&mut self, contributions: &BTreeMap<AccountId, Amount>) -> Result<(), TokenError> {
        if self.allocated {
            return Err(TokenError::AlreadyAllocated);
        }
        self.holdings = allocate_largest_remainder(contributions, self.class.total_supply)
            .into_iter()
            .map(|(holder, units)| (holder, Holding { units, reserved: 0 }))
            .collect();
        self.allocated = true;
        Ok(())
    }

    pub fn balance(&self, holder: &AccountId) -> Result<u64, TokenError> {
        if !self.allocated {
            return Err(TokenError::NoAllocation);
        }
        Ok(self.holdings.get(holder).map_or(0, |h| h.units))
    }

    pub fn free(&self, holder: &AccountId) -> u64 {
        self.holdings.get(holder).map_or(0, |h| h.units - h.reserved)
    }

    pub fn total_units(&self) -> u128 {
        self.holdings.values().map(|h| u128::from(h.units)).sum()
    }

    pub fn reserve(&mut self, holder: &AccountId, units: u64) -> Result<(), TokenError> {
        let available = self.free(holder);
        if available < units {
            return Err(TokenError::InsufficientTokens {
                holder: holder.clone(),
                available,
                needed: units,
            });
        }
        if let Some(h) = self.holdings.get_mut(holder) {
            h.reserved += units;
        }
        Ok(())
    }

    pub fn release(&mut self, holder: &AccountId, units: u64) {
        if let Some(h) = self.holdings.get_mut(holder) {
            h.reserved = h.reserved.checked_sub(units).expect("release within reservation");
        }
    }

    /// Moves reserved units from `seller` to `buyer`.
    pub(crate) fn settle(&mut self, seller: &AccountId, buyer: &AccountId, units: u64) {
        let from = self.holdings.get_mut(seller).expect("seller holds reserved units");
        from.reserved = from.reserved.checked_sub(units).expect("units were reserved");
        from.units -= units;
        self.holdings
            .entry(buyer.clone())
            .or_insert(Holding { units: 0, reserved: 0 })
            .units += units;
    }

    /// `campaign,account,units` rows sorted by account id.
    pub fn csv_rows(&self) -> impl Iterator<Item = String> + '_ {
        self.holdings
            .iter()
            .map(move |(holder, h)| format!("{},{},{}", self.class.campaign_id, holder, h.units))
    }
}
