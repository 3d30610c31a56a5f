//! Secondary market for campaign tokens.
//!
//! A continuous double auction per campaign. Priority is best price, then
//! earliest placement, then lowest order id; an incoming order keeps
//! matching while it crosses and always executes at the resting order's
//! limit. Prices are coin minor units per whole token (10^6 token units),
//! so a fill of `q` units at `p` is worth `floor(q * p / 10^6)` minor units.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::{Amount, UNITS_PER_COIN};
use crate::ids::{AccountId, CampaignId, Timestamp};

pub type OrderId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarketError {
    #[error("unknown order {0}")]
    UnknownOrder(OrderId),
    #[error("order {0} belongs to another trader")]
    NotOwner(OrderId),
    #[error("order {0} is already closed")]
    AlreadyClosed(OrderId),
    #[error("order quantity and price must be positive")]
    InvalidOrder,
    #[error("unknown campaign {0}")]
    UnknownCampaign(CampaignId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "Buy",
            Side::Sell => "Sell",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OrderStatus {
    Open,
    PartiallyFilled,
    Filled,
    Cancelled,
}

impl OrderStatus {
    pub fn is_live(self) -> bool {
        matches!(self, OrderStatus::Open | OrderStatus::PartiallyFilled)
    }
}

/// Cash value of `quantity` token units at `price` per whole token.
pub fn notional(quantity: u64, price: Amount) -> Amount {
    let value = u128::from(quantity) * u128::from(price.minor_units()) / u128::from(UNITS_PER_COIN);
    Amount::from_minor(u64::try_from(value).unwrap_or(u64::MAX))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Order {
    pub order_id: OrderId,
    pub campaign_id: CampaignId,
    pub side: Side,
    pub trader: AccountId,
    /// Units still open.
    pub quantity: u64,
    pub original_quantity: u64,
    pub limit_price: Amount,
    pub placed_at: Timestamp,
    pub status: OrderStatus,
    /// Coins locked for a buy order: `notional(quantity, limit_price)`.
    pub reserved_cash: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub trade_id: u64,
    pub campaign_id: CampaignId,
    pub buy_order_id: OrderId,
    pub sell_order_id: OrderId,
    pub buyer: AccountId,
    pub seller: AccountId,
    pub quantity: u64,
    pub price: Amount,
    pub value: Amount,
    pub executed_at: Timestamp,
}

/// One execution against a resting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fill {
    pub resting_id: OrderId,
    pub quantity: u64,
    pub price: Amount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Level {
    pub price: Amount,
    pub quantity: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BookSnapshot {
    /// Descending by price.
    pub bids: Vec<Level>,
    /// Ascending by price.
    pub asks: Vec<Level>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Resting {
    order_id: OrderId,
    remaining: u64,
}

/// Price levels of one campaign. FIFO within a level is time priority:
/// orders are placed with non-decreasing timestamps and increasing ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OrderBook {
    bids: BTreeMap<Amount, VecDeque<Resting>>,
    asks: BTreeMap<Amount, VecDeque<Resting>>,
}

impl OrderBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best_bid(&self) -> Option<Amount> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<Amount> {
        self.asks.keys().next().copied()
    }

    pub fn is_crossed(&self) -> bool {
        matches!((self.best_bid(), self.best_ask()), (Some(bid), Some(ask)) if bid >= ask)
    }

    /// Consumes opposite liquidity while the incoming limit crosses.
    /// Returns the fills in execution order and the unfilled remainder,
    /// which the caller may [`rest`](Self::rest).
    pub fn execute(&mut self, side: Side, limit: Amount, mut quantity: u64) -> (Vec<Fill>, u64) {
        let mut fills = Vec::new();
        while quantity > 0 {
            let best = match side {
                Side::Buy => self.asks.first_entry().filter(|e| *e.key() <= limit),
                Side::Sell => self.bids.last_entry().filter(|e| *e.key() >= limit),
            };
            let Some(mut level) = best else { break };
            let price = *level.key();
            let queue = level.get_mut();
            while quantity > 0 {
                let Some(head) = queue.front_mut() else { break };
                let take = head.remaining.min(quantity);
                head.remaining -= take;
                quantity -= take;
                fills.push(Fill {
                    resting_id: head.order_id,
                    quantity: take,
                    price,
                });
                if head.remaining == 0 {
                    queue.pop_front();
                }
            }
            if queue.is_empty() {
                level.remove();
            }
        }
        (fills, quantity)
    }

    pub fn rest(&mut self, side: Side, price: Amount, order_id: OrderId, remaining: u64) {
        debug_assert!(remaining > 0);
        let book = match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        };
        book.entry(price).or_default().push_back(Resting { order_id, remaining });
    }

    pub fn remove(&mut self, side: Side, price: Amount, order_id: OrderId) -> bool {
        let book = match side {
            Side::Buy => &mut self.bids,
            Side::Sell => &mut self.asks,
        };
        let Some(queue) = book.get_mut(&price) else {
            return false;
        };
        let before = queue.len();
        queue.retain(|r| r.order_id != order_id);
        let removed = queue.len() != before;
        if queue.is_empty() {
            book.remove(&price);
        }
        removed
    }

    pub fn snapshot(&self) -> BookSnapshot {
        let level = |(price, queue): (&Amount, &VecDeque<Resting>)| Level {
            price: *price,
            quantity: queue.iter().map(|r| r.remaining).sum(),
        };
        BookSnapshot {
            bids: self.bids.iter().rev().map(level).collect(),
            asks: self.asks.iter().map(level).collect(),
        }
    }

    /// `(side, price, order_id, remaining)` in matching priority per side.
    pub fn resting(&self) -> Vec<(Side, Amount, OrderId, u64)> {
        let bids = self
            .bids
            .iter()
            .rev()
            .flat_map(|(p, q)| q.iter().map(move |r| (Side::Buy, *p, r.order_id, r.remaining)));
        let asks = self
            .asks
            .iter()
            .flat_map(|(p, q)| q.iter().map(move |r| (Side::Sell, *p, r.order_id, r.remaining)));
        bids.chain(asks).collect()
    }
}

/// All books plus every order ever accepted and the trade tape.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Market {
    pub(crate) books: BTreeMap<CampaignId, OrderBook>,
    pub(crate) orders: BTreeMap<OrderId, Order>,
    pub(crate) trades: Vec<Trade>,
    pub(crate) next_order_id: OrderId,
}

impl Market {
    pub fn order(&self, id: OrderId) -> Option<&Order> {
        self.orders.get(&id)
    }

    pub fn orders(&self) -> impl Iterator<Item = &Order> {
        self.orders.values()
    }

    pub fn trades(&self) -> &[Trade] {
        &self.trades
    }

    pub fn book(&self, campaign: &CampaignId) -> Option<&OrderBook> {
        self.books.get(campaign)
    }

    pub fn books(&self) -> impl Iterator<Item = (&CampaignId, &OrderBook)> {
        self.books.iter()
    }

    pub fn next_order_id(&self) -> OrderId {
        self.next_order_id
    }

    /// Trade tape as JSON Lines.
    pub fn trades_jsonl(&self) -> String {
        let mut out = String::new();
        for trade in &self.trades {
            out.push_str(&serde_json::to_string(trade).expect("trades always serialize"));
            out.push('\n');
        }
        out
    }
}
