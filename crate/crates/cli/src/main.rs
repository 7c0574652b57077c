//! Command line runner: single experiments, censoring-level sweeps, and a
//! quick oracle/property self-check.
//!
//! Exit codes: 0 success, 1 config error, 2 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use voi_filter::harness;
use voi_filter::scenario::{FilterKind, ScenarioConfig};
use voi_filter::verify;
use voi_filter::Error;

#[derive(Parser)]
#[command(
    name = "voi-filter",
    about = "Censored distributed information filter simulator",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write steps.csv + summary.csv.
    Run {
        /// Scenario config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the configured filter: voi | voi-nocov | diffusion.
        #[arg(long)]
        filter: Option<FilterKind>,
        /// Override the configured censoring level (use `inf` to disable
        /// all transmissions).
        #[arg(long)]
        gamma: Option<f64>,
        /// Override the configured run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the censoring level and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated censoring levels.
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
        /// Seeds averaged per point, counting up from the config seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Override the configured filter.
        #[arg(long)]
        filter: Option<FilterKind>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the reduced oracle/property suite and report pass/fail.
    Verify,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage problems are config errors by contract.
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            filter,
            gamma,
            seed,
            out,
        } => {
            let mut cfg = ScenarioConfig::from_path(&config)?;
            apply_overrides(&mut cfg, filter, gamma, seed)?;
            let run = harness::run_experiment(&cfg)?;
            harness::write_run_outputs(&out, &cfg, &run)?;
            let summary = run.summary(&cfg);
            println!(
                "filter={} gamma={} seed={} asymptotic_rmse={:.3} medium_access={:.4} kbps={:.3}",
                summary.filter,
                summary.gamma,
                summary.seed,
                summary.asymptotic_rmse,
                summary.mean_medium_access,
                summary.kbps
            );
            Ok(())
        }
        Command::Sweep {
            config,
            gammas,
            seeds,
            filter,
            out,
        } => {
            let mut cfg = ScenarioConfig::from_path(&config)?;
            apply_overrides(&mut cfg, filter, None, None)?;
            let outcomes = harness::run_sweep(&cfg, &gammas, seeds);
            harness::write_sweep_csv(&out, &outcomes)?;
            let mut failures = 0;
            for outcome in &outcomes {
                match &outcome.point {
                    Ok(p) => println!(
                        "gamma={} rmse={:.3} access={:.4} kbps={:.3}",
                        p.gamma, p.asymptotic_rmse, p.mean_medium_access, p.total_kbps
                    ),
                    Err(e) => {
                        failures += 1;
                        println!("gamma={} FAILED: {e}", outcome.gamma);
                    }
                }
            }
            if failures > 0 {
                return Err(Error::InternalConsistency(format!(
                    "{failures} sweep point(s) failed"
                )));
            }
            Ok(())
        }
        Command::Verify => {
            let results = verify::quick_suite();
            let mut all_pass = true;
            for r in &results {
                let status = if r.pass { "PASS" } else { "FAIL" };
                println!("verify {:<42} {status}  ({})", r.name, r.detail);
                all_pass &= r.pass;
            }
            if all_pass {
                Ok(())
            } else {
                Err(Error::InternalConsistency(
                    "verification suite failed".into(),
                ))
            }
        }
    }
}

fn apply_overrides(
    cfg: &mut ScenarioConfig,
    filter: Option<FilterKind>,
    gamma: Option<f64>,
    seed: Option<u64>,
) -> Result<(), Error> {
    if let Some(f) = filter {
        cfg.filter.kind = f;
    }
    if let Some(g) = gamma {
        if g < 0.0 || g.is_nan() {
            return Err(Error::Config("gamma must be nonnegative".into()));
        }
        cfg.filter.gamma = g;
    }
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    cfg.validate()
}
