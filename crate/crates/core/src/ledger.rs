//! Stablecoin balances.
//!
//! The ledger only tracks state; the engine is responsible for logging.
//! Every mutating method validates fully before touching any balance, so a
//! returned error always means nothing changed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::{Amount, AmountError, Bps, UNITS_PER_COIN};
use crate::ids::AccountId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("account {0} already exists")]
    DuplicateAccount(AccountId),
    #[error("invalid account id {0:?}")]
    InvalidId(String),
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("insufficient funds in {account}: available {available}, needed {needed}")]
    InsufficientFunds {
        account: AccountId,
        available: Amount,
        needed: Amount,
    },
    #[error("cannot transfer to self")]
    SelfTransfer,
    #[error("fee must be within 0..=10000 bps")]
    InvalidFee,
    #[error("account {0} is engine-managed")]
    SystemAccount(AccountId),
    #[error(transparent)]
    Arithmetic(#[from] AmountError),
}

/// What a fee-bearing transfer did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransferReceipt {
    pub gross: Amount,
    pub net: Amount,
    pub fee: Amount,
}

/// Conversion rate from coins to a fiat currency's minor units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiatRate {
    pub currency_code: String,
    pub minor_units_fiat_per_coin: u64,
}

impl FiatRate {
    pub fn new(currency_code: &str, minor_units_fiat_per_coin: u64) -> Option<Self> {
        let valid_code = currency_code.len() == 3 && currency_code.bytes().all(|b| b.is_ascii_uppercase());
        (valid_code && minor_units_fiat_per_coin > 0).then(|| FiatRate {
            currency_code: currency_code.to_string(),
            minor_units_fiat_per_coin,
        })
    }

    pub fn is_valid(&self) -> bool {
        FiatRate::new(&self.currency_code, self.minor_units_fiat_per_coin).is_some()
    }
}

/// `floor(amount * rate / 1_000_000)` fiat minor units.
pub fn convert_to_fiat(amount: Amount, rate: &FiatRate) -> u128 {
    u128::from(amount.minor_units()) * u128::from(rate.minor_units_fiat_per_coin) / u128::from(UNITS_PER_COIN)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AccountState {
    pub balance: Amount,
    /// Portion of `balance` locked by open buy orders.
    pub reserved: Amount,
}

impl AccountState {
    pub fn available(&self) -> Amount {
        // reserved <= balance is a ledger invariant
        self.balance.checked_sub(self.reserved).unwrap_or(Amount::ZERO)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    accounts: BTreeMap<AccountId, AccountState>,
    minted: Amount,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_account(&mut self, id: AccountId) -> Result<(), LedgerError> {
        if self.accounts.contains_key(&id) {
            return Err(LedgerError::DuplicateAccount(id));
        }
        self.accounts.insert(id, AccountState::default());
        Ok(())
    }

    pub fn contains(&self, id: &AccountId) -> bool {
        self.accounts.contains_key(id)
    }

    pub fn account(&self, id: &AccountId) -> Result<&AccountState, LedgerError> {
        self.accounts
            .get(id)
            .ok_or_else(|| LedgerError::UnknownAccount(id.clone()))
    }

    pub fn balance(&self, id: &AccountId) -> Result<Amount, LedgerError> {
        self.account(id).map(|a| a.balance)
    }

    pub fn available(&self, id: &AccountId) -> Result<Amount, LedgerError> {
        self.account(id).map(AccountState::available)
    }

    pub fn minted_supply(&self) -> Amount {
        self.minted
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&AccountId, &AccountState)> {
        self.accounts.iter()
    }

    /// Σ balances, in 128 bits so the check itself cannot overflow.
    pub fn total_balances(&self) -> u128 {
        self.accounts.values().map(|a| u128::from(a.balance.minor_units())).sum()
    }

    pub fn mint(&mut self, to: &AccountId, amount: Amount) -> Result<Amount, LedgerError> {
        let current = self.balance(to)?;
        if amount.is_zero() {
            return Err(LedgerError::ZeroAmount);
        }
        let minted = self.minted.checked_add(amount)?;
        let balance = current.checked_add(amount)?;
        self.minted = minted;
        self.accounts.get_mut(to).expect("checked above").balance = balance;
        Ok(balance)
    }

    /// Moves `amount` out of `from`; the recipient gets `amount - fee` and
    /// `fee_sink` gets `fee = floor(amount * fee_bps / 10_000)`.
    pub fn transfer(
        &mut self,
        from: &AccountId,
        to: &AccountId,
        amount: Amount,
        fee_bps: Bps,
        fee_sink: &AccountId,
    ) -> Result<TransferReceipt, LedgerError> {
        let receipt = self.plan_transfer(from, to, amount, fee_bps, fee_sink)?;
        self.debit(from, receipt.gross);
        self.credit(to, receipt.net);
        self.credit(fee_sink, receipt.fee);
        Ok(receipt)
    }

    /// Validates a transfer without applying it.
    pub fn plan_transfer(
        &self,
        from: &AccountId,
        to: &AccountId,
        amount: Amount,
        fee_bps: Bps,
        fee_sink: &AccountId,
    ) -> Result<TransferReceipt, LedgerError> {
        let available = self.available(from)?;
        self.account(to)?;
        self.account(fee_sink)?;
        if from == to {
            return Err(LedgerError::SelfTransfer);
        }
        if fee_bps > Bps::FULL {
            return Err(LedgerError::InvalidFee);
        }
        if amount.is_zero() {
            return Err(LedgerError::ZeroAmount);
        }
        if available < amount {
            return Err(LedgerError::InsufficientFunds {
                account: from.clone(),
                available,
                needed: amount,
            });
        }
        let fee = amount.apply_bps(fee_bps);
        let net = amount.checked_sub(fee)?;
        Ok(TransferReceipt { gross: amount, net, fee })
    }

    /// Fee-free move between two accounts.
    pub fn move_funds(&mut self, from: &AccountId, to: &AccountId, amount: Amount) -> Result<(), LedgerError> {
        self.transfer(from, to, amount, Bps::ZERO, to).map(|_| ())
    }

    pub fn reserve(&mut self, id: &AccountId, amount: Amount) -> Result<(), LedgerError> {
        let account = self.account(id)?;
        let available = account.available();
        if available < amount {
            return Err(LedgerError::InsufficientFunds {
                account: id.clone(),
                available,
                needed: amount,
            });
        }
        let reserved = account.reserved.checked_add(amount)?;
        self.accounts.get_mut(id).expect("checked above").reserved = reserved;
        Ok(())
    }

    pub fn release(&mut self, id: &AccountId, amount: Amount) -> Result<(), LedgerError> {
        let account = self.account(id)?;
        let reserved = account.reserved.checked_sub(amount)?;
        self.accounts.get_mut(id).expect("checked above").reserved = reserved;
        Ok(())
    }

    // Balances sum to the minted supply, so individual credits cannot
    // overflow and debits are pre-checked by plan_transfer.
    fn debit(&mut self, id: &AccountId, amount: Amount) {
        let account = self.accounts.get_mut(id).expect("planned account");
        account.balance = account.balance.checked_sub(amount).expect("planned debit");
    }

    fn credit(&mut self, id: &AccountId, amount: Amount) {
        let account = self.accounts.get_mut(id).expect("planned account");
        account.balance = account.balance.checked_add(amount).expect("bounded by supply");
    }
}
