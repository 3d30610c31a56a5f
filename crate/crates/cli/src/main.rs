use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use stablefund_core::event::{check_log, ChainVerdict};
use stablefund_core::fee::fee_comparison;
use stablefund_core::generate::{generate_scenario, GeneratorConfig};
use stablefund_core::scenario::{replay_verify, ReplayVerdict};
use stablefund_core::{run_scenario, Amount, RunOptions, Scenario, ScenarioError};

#[derive(Parser)]
#[command(name = "stablefund", version, about = "Deterministic stablecoin crowdfunding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a scenario and write its outputs.
    Run {
        scenario: PathBuf,
        /// Output directory; nothing is written when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Check every invariant after every command.
        #[arg(long)]
        verify: bool,
    },
    /// Run a scenario twice and compare the event chains.
    Replay { scenario: PathBuf },
    /// Compare traditional and framework fees on a gross amount.
    FeeReport {
        /// Gross amount in coins, e.g. 100000 or 12.5
        #[arg(long)]
        gross: Amount,
        #[arg(long, default_value_t = 400)]
        traditional_bps: u64,
        #[arg(long, default_value_t = 50)]
        framework_bps: u64,
    },
    /// Verify an exported events.jsonl file.
    CheckLog { log: PathBuf },
    /// Print a random scenario for the given seed.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long, default_value_t = 6)]
        accounts: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Cmd::Run { scenario, out, verify } => {
            let scenario = load(&scenario)?;
            let output = run_scenario(&scenario, RunOptions { verify })?;
            if let Some(dir) = out {
                output
                    .write_to(&dir)
                    .with_context(|| format!("writing outputs to {}", dir.display()))?;
            }
            println!(
                "{}: {} commands, {} rejected, {} events, head {}",
                scenario.name,
                output.outcomes.len(),
                output.rejections(),
                output.engine.log().len(),
                hex::encode(output.engine.log().head_hash()),
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { scenario } => {
            let scenario = load(&scenario)?;
            let verdict = replay_verify(&scenario)?;
            println!("{}", serde_json::to_string(&verdict)?);
            Ok(match verdict {
                ReplayVerdict::Match => ExitCode::SUCCESS,
                ReplayVerdict::Mismatch => ExitCode::FAILURE,
            })
        }
        Cmd::FeeReport {
            gross,
            traditional_bps,
            framework_bps,
        } => {
            let report = fee_comparison(gross, traditional_bps, framework_bps)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::CheckLog { log } => {
            let bytes = fs::read(&log).with_context(|| format!("reading {}", log.display()))?;
            let verdict = check_log(&bytes);
            println!("{}", serde_json::to_string(&verdict)?);
            Ok(match verdict {
                ChainVerdict::Ok => ExitCode::SUCCESS,
                ChainVerdict::BadAt { .. } => ExitCode::FAILURE,
            })
        }
        Cmd::Generate { seed, steps, accounts } => {
            print!("{}", generate_scenario(seed, GeneratorConfig { accounts, steps }).to_json());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load(path: &Path) -> Result<Scenario, ScenarioError> {
    Scenario::load(path)
}
