mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use stablefund_core::compliance::audit_gate;
use stablefund_core::event::{check_log, ChainVerdict};
use stablefund_core::fee::fee_comparison;
use stablefund_core::generate::{generate_scenario, GeneratorConfig};
use stablefund_core::market::{OrderStatus, Side};
use stablefund_core::tokenization::{allocate_largest_remainder, TokenKind};
use stablefund_core::{run_scenario, AccountId, Amount, Engine, NewOrder, RunOptions};

fn market() -> Engine {
    let traders = ["a", "b", "c", "d"];
    let mut e = crowd(&traders, 1_100);
    e.create_campaign(simple_campaign("m", minor(1), 10).params()).unwrap();
    e.define_token(&cid("m"), TokenKind::Equity, 4_000_000).unwrap();
    for t in traders {
        e.contribute(&cid("m"), &acct(t), coins(100)).unwrap();
    }
    e.advance_to(10).unwrap();
    e.finalize(&cid("m")).unwrap();
    e
}

#[derive(Debug, Clone)]
enum Op {
    Place { trader: usize, buy: bool, quantity: u64, ticks: u64 },
    Cancel { pick: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..4usize, any::<bool>(), 1..1_500_000u64, 1..40u64)
            .prop_map(|(trader, buy, quantity, ticks)| Op::Place { trader, buy, quantity, ticks }),
        1 => any::<usize>().prop_map(|pick| Op::Cancel { pick }),
    ]
}

fn contributions() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0..5_000_000u64, 1..=12)
}

fn named(amounts: &[u64]) -> Vec<(AccountId, u64)> {
    amounts.iter().enumerate().map(|(i, &c)| (acct(&format!("h{i:02}")), c)).collect()
}

proptest! {
    #[test]
    fn transfer_fee_is_floored_and_exact(gross in 1..u64::MAX / 2, rate in 0..=10_000u64) {
        let mut e = engine_with(&["from", "to", "sink"], 0);
        e.mint(&acct("from"), minor(gross)).unwrap();
        let r = e.transfer(&acct("from"), &acct("to"), minor(gross), bps(rate), &acct("sink")).unwrap();
        prop_assert_eq!(r.fee.minor_units(), rational_floor(gross, rate, 10_000));
        prop_assert_eq!(r.net.minor_units() + r.fee.minor_units(), gross);
        prop_assert_eq!(e.balance(&acct("to")).unwrap(), r.net);
        prop_assert_eq!(e.balance(&acct("sink")).unwrap(), r.fee);
        e.check_invariants().unwrap();
    }

    #[test]
    fn cheaper_rate_always_nets_more(gross in 0..10u64.pow(15), t in 0..=10_000u64, f in 0..=10_000u64) {
        let r = fee_comparison(minor(gross), t, f).unwrap();
        prop_assert_eq!(r.traditional_fee.minor_units(), rational_floor(gross, t, 10_000));
        prop_assert_eq!(r.framework_fee.minor_units(), rational_floor(gross, f, 10_000));
        prop_assert_eq!(r.framework_net.minor_units() + r.framework_fee.minor_units(), gross);
        if f <= t {
            prop_assert!(r.framework_net >= r.traditional_net);
        }
    }

    #[test]
    fn amount_text_round_trips(units in any::<u64>()) {
        let a = minor(units);
        prop_assert_eq!(a.to_string().parse::<Amount>().unwrap(), a);
        let json = serde_json::to_string(&a).unwrap();
        prop_assert_eq!(serde_json::from_str::<Amount>(&json).unwrap(), a);
    }

    #[test]
    fn allocation_matches_oracle(amounts in contributions(), supply in 1..10_000_000u64) {
        let holders = named(&amounts);
        let map: BTreeMap<AccountId, Amount> = holders.iter().map(|(h, c)| (h.clone(), minor(*c))).collect();
        let got = allocate_largest_remainder(&map, supply);
        let total: u64 = amounts.iter().sum();
        if total == 0 {
            prop_assert!(got.is_empty());
            return Ok(());
        }
        prop_assert_eq!(got.values().sum::<u64>(), supply);
        prop_assert_eq!(&got, &brute_force_allocation(&holders, supply));
        for (h, c) in &holders {
            if *c > 0 {
                prop_assert!(within_one_unit(got[h], *c, total, supply));
            }
        }
        prop_assert_eq!(&allocate_largest_remainder(&map, supply), &got);
    }

    #[test]
    fn allocation_is_monotone(amounts in contributions(), supply in 1..10_000_000u64) {
        let holders = named(&amounts);
        let map: BTreeMap<AccountId, Amount> = holders.iter().map(|(h, c)| (h.clone(), minor(*c))).collect();
        let got = allocate_largest_remainder(&map, supply);
        let held = |h: &AccountId| got.get(h).copied().unwrap_or(0);
        for (a, ca) in &holders {
            for (b, cb) in &holders {
                if ca > cb {
                    prop_assert!(held(a) >= held(b), "{a}:{ca} got {} < {b}:{cb} got {}", held(a), held(b));
                }
            }
        }
    }

    #[test]
    fn book_never_crosses_and_reservations_balance(ops in prop::collection::vec(op(), 1..50)) {
        let traders = ["a", "b", "c", "d"];
        let mut e = market();
        let mut placed = Vec::new();
        for op in ops {
            let before = e.state_hash();
            let result = match op {
                Op::Place { trader, buy, quantity, ticks } => e
                    .place_order(NewOrder {
                        campaign: cid("m"),
                        trader: acct(traders[trader]),
                        side: if buy { Side::Buy } else { Side::Sell },
                        quantity,
                        limit_price: minor(ticks * 250_000),
                    })
                    .map(|p| placed.push((p.order.order_id, p.order.trader))),
                Op::Cancel { pick } if !placed.is_empty() => {
                    let (id, who) = placed[pick % placed.len()].clone();
                    e.cancel_order(id, &who).map(drop)
                }
                Op::Cancel { .. } => Ok(()),
            };
            if result.is_err() {
                prop_assert_eq!(e.state_hash(), before);
            }
            e.check_invariants().unwrap();
            let book = e.book_snapshot(&cid("m"));
            if let (Some(bid), Some(ask)) = (book.bids.first(), book.asks.first()) {
                prop_assert!(bid.price < ask.price);
            }
            for t in traders {
                let live = |side| {
                    e.market()
                        .orders()
                        .filter(move |o| o.trader == acct(t) && o.side == side && o.status.is_live())
                };
                let cash: u64 = live(Side::Buy).map(|o| o.reserved_cash.minor_units()).sum();
                let units: u64 = live(Side::Sell).map(|o| o.quantity).sum();
                let account = e.ledger().account(&acct(t)).unwrap();
                prop_assert_eq!(account.reserved.minor_units(), cash);
                prop_assert_eq!(account.available().minor_units() + cash, account.balance.minor_units());
                let table = e.cap_table(&cid("m")).unwrap();
                prop_assert_eq!(table.free(&acct(t)) + units, table.balance(&acct(t)).unwrap());
            }
        }
        let supply: u128 = e.cap_table(&cid("m")).unwrap().total_units();
        prop_assert_eq!(supply, 4_000_000);
        prop_assert!(e.market().orders().all(|o| o.status != OrderStatus::Open || o.quantity > 0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_scenarios_hold_every_invariant(seed in any::<u64>(), steps in 10..120usize) {
        let s = generate_scenario(seed, GeneratorConfig { accounts: 6, steps });
        // verify mode checks conservation, escrow and unchanged state on rejection per command
        let out = run_scenario(&s, RunOptions { verify: true }).unwrap();
        prop_assert_eq!(check_log(out.events_jsonl().as_bytes()), ChainVerdict::Ok);
        prop_assert!(audit_gate(out.engine.log().records()).is_empty());
        let again = run_scenario(&s, RunOptions::default()).unwrap();
        prop_assert_eq!(again.events_jsonl(), out.events_jsonl());
        prop_assert_eq!(again.snapshot_json(), out.snapshot_json());
    }

    #[test]
    fn any_byte_change_is_detected(seed in 0..64u64, pos in any::<prop::sample::Index>(), byte in any::<u8>()) {
        let s = generate_scenario(seed, GeneratorConfig { accounts: 4, steps: 20 });
        let mut bytes = run_scenario(&s, RunOptions::default()).unwrap().events_jsonl().into_bytes();
        let i = pos.index(bytes.len());
        prop_assume!(bytes[i] != byte);
        bytes[i] = byte;
        prop_assert_ne!(check_log(&bytes), ChainVerdict::Ok);
    }
}
