mod common;

use common::*;
use num_bigint::BigInt;
use num_rational::BigRational;
use stablefund_core::bundled;
use stablefund_core::campaign::CampaignState;
use stablefund_core::event::{check_log, ChainVerdict, EventKind};
use stablefund_core::generate::{generate_scenario, GeneratorConfig};
use stablefund_core::scenario::{replay_compare, replay_verify, Action, ReplayVerdict};
use stablefund_core::{run_scenario, Amount, RunOptions, Scenario, ScenarioError};

fn verify() -> RunOptions {
    RunOptions { verify: true }
}

fn rejected_codes(scenario: &str) -> Vec<(String, String)> {
    let out = run_scenario(&bundled::bundled(scenario).unwrap(), verify()).unwrap();
    out.outcomes
        .iter()
        .filter_map(|o| o.rejected.clone().map(|r| (o.action.to_string(), r)))
        .collect()
}

#[test]
fn empty_scenario_has_only_genesis() {
    let s = Scenario::from_json(r#"{"name": "empty"}"#).unwrap();
    let out = run_scenario(&s, verify()).unwrap();
    assert_eq!(out.engine.log().len(), 1);
    assert_eq!(out.engine.log().records()[0].kind, EventKind::Genesis);
    assert!(out.engine.snapshot().accounts.is_empty());
    assert_eq!(out.captable_csv(), "campaign,account,units\n");
    assert_eq!(out.trades_jsonl(), "");
}

#[test]
fn turkey_equity_hand_trace() {
    let out = run_scenario(&bundled::bundled("turkey_equity").unwrap(), verify()).unwrap();
    assert_eq!(out.rejections(), 0);
    let e = &out.engine;
    let c = e.campaign(&cid("istanbul-rooftops")).unwrap();
    assert_eq!(c.state, CampaignState::Completed);
    assert_eq!(c.escrow_balance, Amount::ZERO);
    assert_eq!(e.balance(&c.escrow_account).unwrap(), Amount::ZERO);

    // 30,000 + 25,000 gross at 50 bps: fees 150 + 125, net 54,725
    assert_eq!(c.total_raised, coins(54_725));
    assert_eq!(e.balance(&acct("platform")).unwrap(), coins(275));
    assert_eq!(e.balance(&acct("anadolu-solar")).unwrap(), coins(54_725));
    let released: Vec<Amount> = c.milestones.iter().map(|m| m.released).collect();
    assert_eq!(released, [coins(21_890), coins(32_835)]);

    let finals: Vec<&str> = e
        .log()
        .records()
        .iter()
        .filter(|r| r.kind == EventKind::Finalize)
        .filter_map(|r| r.payload.str("state"))
        .collect();
    assert_eq!(finals, ["Funded"]);

    // ayse holds 29,850 / 54,725 = 6/11 of 10^12 units, less the 50 tokens she sold
    let supply = 1_000_000_000_000u64;
    let quota = BigRational::new(BigInt::from(supply) * 29_850, BigInt::from(54_725));
    let ayse_alloc: u64 = quota.round().to_integer().try_into().unwrap();
    assert_eq!(ayse_alloc, 545_454_545_455);
    let ayse = e.token_balance(&cid("istanbul-rooftops"), &acct("ayse")).unwrap();
    let mehmet = e.token_balance(&cid("istanbul-rooftops"), &acct("mehmet")).unwrap();
    assert_eq!(ayse, ayse_alloc - 50_000_000);
    assert_eq!(ayse + mehmet, supply);

    assert_eq!(e.market().trades().len(), 1);
    assert_eq!(e.balance(&acct("ayse")).unwrap(), coins(100));
    assert_eq!(e.balance(&acct("mehmet")).unwrap(), coins(900));

    let fee = &out.fee_report;
    assert_eq!(fee.comparison.gross_raised, coins(55_000));
    assert_eq!(fee.comparison.traditional_fee, coins(2_200));
    assert_eq!(fee.comparison.framework_fee, coins(275));
    assert_eq!(fee.fiat[0].currency_code, "TRY");
    // 2,200 coins at 34.50 TRY: 7,590,000 kurus; 275 coins: 948,750
    assert_eq!((fee.fiat[0].traditional_fee, fee.fiat[0].framework_fee), (7_590_000, 948_750));

    assert_eq!(out.reports.len(), 1);
    assert_eq!(out.reports[0].entries.len(), 3);
}

#[test]
fn bundled_rejections_are_the_intended_ones() {
    let pairs = |v: &[(&str, &str)]| -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    };
    assert_eq!(
        rejected_codes("failed_refund"),
        pairs(&[
            ("refund", "FundingStillActive"),
            ("finalize", "TooEarly"),
            ("contribute", "DeadlinePassed"),
            ("refund", "NothingToRefund"),
            ("disburse", "NotFunded"),
            ("place_order", "NoAllocation"),
        ])
    );
    assert_eq!(
        rejected_codes("secondary_market"),
        pairs(&[
            ("place_order", "InsufficientFunds"),
            ("place_order", "InsufficientTokens"),
            ("cancel_order", "NotOwner"),
            ("cancel_order", "AlreadyClosed"),
            ("approve_milestone", "OutOfOrder"),
            ("disburse", "NotApproved"),
        ])
    );
    assert_eq!(
        rejected_codes("compliance_mixed"),
        pairs(&[
            ("set_kyc", "IllegalTransition"),
            ("create_campaign", "GateDenied"),
            ("contribute", "GateDenied"),
            ("contribute", "GateDenied"),
            ("contribute", "GateDenied"),
            ("contribute", "GateDenied"),
            ("generate_report", "InvalidWindow"),
        ])
    );
}

#[test]
fn failed_refund_returns_everything() {
    let out = run_scenario(&bundled::bundled("failed_refund").unwrap(), verify()).unwrap();
    let e = &out.engine;
    let c = e.campaign(&cid("board-game")).unwrap();
    assert_eq!(c.state, CampaignState::Failed);
    assert_eq!(c.escrow_balance, Amount::ZERO);
    // 1% fee is kept by the platform; the net comes back
    assert_eq!(e.balance(&acct("alice")).unwrap(), coins(5_000 - 30));
    assert_eq!(e.balance(&acct("bob")).unwrap(), coins(2_000 - 20));
    assert_eq!(e.balance(&acct("platform")).unwrap(), coins(50));
}

#[test]
fn malformed_scenarios() {
    let malformed = |text: &str| matches!(Scenario::from_json(text), Err(ScenarioError::MalformedScenario(_)));
    assert!(malformed("{"));
    assert!(malformed(r#"{"name": "x", "bogus": 1}"#));
    assert!(malformed(
        r#"{"name": "x", "commands": [{"at": 0, "action": {"type": "mint", "to": "ghost", "amount": 1}}]}"#
    ));
    assert!(malformed(
        r#"{"name": "x", "commands": [{"at": 0, "action": {"type": "finalize", "campaign": "nope"}}]}"#
    ));
    assert!(malformed(
        r#"{"name": "x", "commands": [
            {"at": 5, "action": {"type": "create_account", "id": "a"}},
            {"at": 4, "action": {"type": "create_account", "id": "b"}}]}"#
    ));
    assert!(malformed(
        r#"{"name": "x", "commands": [{"at": 0, "action": {"type": "teleport"}}]}"#
    ));
    assert!(malformed(
        r#"{"name": "x", "fiat_rates": [{"currency_code": "lira", "minor_units_fiat_per_coin": 1}]}"#
    ));
    assert!(malformed(
        r#"{"name": "x", "commands": [{"at": 0, "action": {"type": "create_account", "id": "a"}},
            {"at": 0, "action": {"type": "mint", "to": "a", "amount": "1.0000001"}}]}"#
    ));
}

#[test]
fn amounts_accept_minor_units_and_decimal_coins() {
    let s = Scenario::from_json(
        r#"{"name": "x", "commands": [
            {"at": 0, "action": {"type": "create_account", "id": "a"}},
            {"at": 0, "action": {"type": "mint", "to": "a", "amount": 1500000}},
            {"at": 0, "action": {"type": "mint", "to": "a", "amount": "1.5"}}]}"#,
    )
    .unwrap();
    let out = run_scenario(&s, verify()).unwrap();
    assert_eq!(out.engine.balance(&acct("a")).unwrap(), minor(3_000_000));
}

#[test]
fn replay_examples() {
    for s in bundled::all() {
        assert_eq!(replay_verify(&s).unwrap(), ReplayVerdict::Match, "{}", s.name);
    }

    let base = bundled::bundled("turkey_equity").unwrap();
    let mut changed = base.clone();
    for cmd in &mut changed.commands {
        if let Action::Contribute { amount, .. } = &mut cmd.action {
            *amount = amount.checked_add(minor(1)).unwrap();
            break;
        }
    }
    assert_eq!(replay_compare(&base, &changed).unwrap(), ReplayVerdict::Mismatch);

    let mut reseeded = base.clone();
    reseeded.seed = base.seed + 1;
    assert_eq!(replay_compare(&base, &reseeded).unwrap(), ReplayVerdict::Match);
}

#[test]
fn identical_runs_are_byte_identical() {
    for s in bundled::all() {
        let a = run_scenario(&s, RunOptions::default()).unwrap();
        let b = run_scenario(&s, verify()).unwrap();
        assert_eq!(a.events_jsonl(), b.events_jsonl());
        assert_eq!(a.snapshot_json(), b.snapshot_json());
        assert_eq!(a.captable_csv(), b.captable_csv());
        assert_eq!(a.trades_jsonl(), b.trades_jsonl());
        assert_eq!(a.fee_report_json(), b.fee_report_json());
        assert_eq!(check_log(a.events_jsonl().as_bytes()), ChainVerdict::Ok);
    }
}

#[test]
fn outputs_are_written() {
    let dir = std::env::temp_dir().join(format!("stablefund-outputs-{}", std::process::id()));
    let out = run_scenario(&bundled::bundled("compliance_mixed").unwrap(), verify()).unwrap();
    out.write_to(&dir).unwrap();
    for file in ["events.jsonl", "snapshot.json", "captable.csv", "trades.jsonl", "fee_report.json", "report-0.json", "report-1.json"] {
        assert!(dir.join(file).is_file(), "{file}");
    }
    let events = std::fs::read(dir.join("events.jsonl")).unwrap();
    assert_eq!(check_log(&events), ChainVerdict::Ok);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn generated_scenarios_round_trip_through_json() {
    for seed in 0..20 {
        let s = generate_scenario(seed, GeneratorConfig::default());
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
        assert_eq!(generate_scenario(seed, GeneratorConfig::default()), s);
    }
}
