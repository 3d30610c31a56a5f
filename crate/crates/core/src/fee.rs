//! Fee comparison between a traditional intermediary and the on-ledger
//! framework, using the same floor rule as ledger transfers.

use serde::Serialize;

use crate::amount::{Amount, AmountError, Bps, BPS_DENOMINATOR};
use crate::ledger::{convert_to_fiat, FiatRate, LedgerError};

/// Default traditional platform fee.
pub const DEFAULT_TRADITIONAL_BPS: u64 = 400;
/// Default framework fee.
pub const DEFAULT_FRAMEWORK_BPS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeeComparisonReport {
    pub gross_raised: Amount,
    pub traditional_bps: Bps,
    pub framework_bps: Bps,
    pub traditional_fee: Amount,
    pub framework_fee: Amount,
    pub traditional_net: Amount,
    pub framework_net: Amount,
    /// Floored; negative when the framework is the more expensive one.
    pub savings_bps: i64,
}

pub fn fee_comparison(gross: Amount, traditional_bps: u64, framework_bps: u64) -> Result<FeeComparisonReport, LedgerError> {
    let invalid = |_: AmountError| LedgerError::InvalidFee;
    let traditional_bps = Bps::new(traditional_bps).map_err(invalid)?;
    let framework_bps = Bps::new(framework_bps).map_err(invalid)?;
    let traditional_fee = gross.apply_bps(traditional_bps);
    let framework_fee = gross.apply_bps(framework_bps);
    let savings_bps = if gross.is_zero() {
        0
    } else {
        let diff = i128::from(traditional_fee.minor_units()) - i128::from(framework_fee.minor_units());
        let scaled = (diff * i128::from(BPS_DENOMINATOR)).div_euclid(i128::from(gross.minor_units()));
        // |diff| <= gross, so |scaled| <= 10_000
        scaled as i64
    };
    Ok(FeeComparisonReport {
        gross_raised: gross,
        traditional_bps,
        framework_bps,
        traditional_fee,
        framework_fee,
        traditional_net: Amount::from_minor(gross.minor_units() - traditional_fee.minor_units()),
        framework_net: Amount::from_minor(gross.minor_units() - framework_fee.minor_units()),
        savings_bps,
    })
}

/// The same comparison expressed in a fiat currency's minor units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FiatFeeLine {
    pub currency_code: String,
    pub gross_raised: u128,
    pub traditional_fee: u128,
    pub framework_fee: u128,
    pub savings: i128,
}

impl FiatFeeLine {
    pub fn new(report: &FeeComparisonReport, rate: &FiatRate) -> Self {
        let traditional_fee = convert_to_fiat(report.traditional_fee, rate);
        let framework_fee = convert_to_fiat(report.framework_fee, rate);
        FiatFeeLine {
            currency_code: rate.currency_code.clone(),
            gross_raised: convert_to_fiat(report.gross_raised, rate),
            traditional_fee,
            framework_fee,
            savings: traditional_fee as i128 - framework_fee as i128,
        }
    }
}
