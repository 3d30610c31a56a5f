//! Fixed-point stablecoin quantities and basis-point rates.
//!
//! One coin is `1_000_000` minor units. All arithmetic is checked integer
//! arithmetic; nothing ever wraps or goes negative.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Minor units per whole coin (6 decimal places).
pub const UNITS_PER_COIN: u64 = 1_000_000;

/// Basis points in 100%.
pub const BPS_DENOMINATOR: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AmountError {
    #[error("amount arithmetic overflow")]
    Overflow,
    #[error("amount arithmetic underflow")]
    Underflow,
    #[error("cannot parse amount {0:?}")]
    Parse(String),
    #[error("basis points {0} exceed 10000")]
    BpsOutOfRange(u64),
}

/// Non-negative stablecoin quantity in minor units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Amount(u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn from_minor(units: u64) -> Self {
        Amount(units)
    }

    /// Whole coins, checked against overflow.
    pub fn from_coins(coins: u64) -> Result<Self, AmountError> {
        coins
            .checked_mul(UNITS_PER_COIN)
            .map(Amount)
            .ok_or(AmountError::Overflow)
    }

    pub const fn minor_units(self) -> u64 {
        self.0
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, rhs: Amount) -> Result<Amount, AmountError> {
        self.0.checked_add(rhs.0).map(Amount).ok_or(AmountError::Overflow)
    }

    pub fn checked_sub(self, rhs: Amount) -> Result<Amount, AmountError> {
        self.0.checked_sub(rhs.0).map(Amount).ok_or(AmountError::Underflow)
    }

    /// `floor(self * bps / 10_000)`.
    pub fn apply_bps(self, bps: Bps) -> Amount {
        let scaled = u128::from(self.0) * u128::from(bps.value()) / u128::from(BPS_DENOMINATOR);
        // bps <= 10_000 so the result never exceeds self
        Amount(scaled as u64)
    }

    /// `floor(self * numerator / denominator)` computed in 128 bits.
    pub fn mul_div_floor(self, numerator: u64, denominator: u64) -> Result<Amount, AmountError> {
        assert!(denominator > 0, "zero denominator");
        let scaled = u128::from(self.0) * u128::from(numerator) / u128::from(denominator);
        u64::try_from(scaled)
            .map(Amount)
            .map_err(|_| AmountError::Overflow)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{:06}",
            self.0 / UNITS_PER_COIN,
            self.0 % UNITS_PER_COIN
        )
    }
}

/// Accepts `"12"`, `"12.5"` or `"0.000001"`; at most six fractional digits.
impl FromStr for Amount {
    type Err = AmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AmountError::Parse(s.to_string());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty()
            || !whole.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
            || frac.len() > 6
            || (s.contains('.') && frac.is_empty())
        {
            return Err(bad());
        }
        let whole: u64 = whole.parse().map_err(|_| bad())?;
        let mut frac_units: u64 = 0;
        if !frac.is_empty() {
            frac_units = frac.parse().map_err(|_| bad())?;
            frac_units *= 10u64.pow(6 - frac.len() as u32);
        }
        whole
            .checked_mul(UNITS_PER_COIN)
            .and_then(|w| w.checked_add(frac_units))
            .map(Amount)
            .ok_or(AmountError::Overflow)
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.0)
    }
}

/// Integers are minor units; strings are decimal coin quantities.
impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Minor(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Minor(units) => Ok(Amount(units)),
            Raw::Text(text) => text.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A rate in basis points, `0..=10_000`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Bps(u16);

impl Bps {
    pub const ZERO: Bps = Bps(0);
    pub const FULL: Bps = Bps(10_000);

    pub fn new(value: u64) -> Result<Self, AmountError> {
        if value > BPS_DENOMINATOR {
            return Err(AmountError::BpsOutOfRange(value));
        }
        Ok(Bps(value as u16))
    }

    pub const fn value(self) -> u64 {
        self.0 as u64
    }
}

impl<'de> Deserialize<'de> for Bps {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = u64::deserialize(deserializer)?;
        Bps::new(raw).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Bps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}bps", self.0)
    }
}
