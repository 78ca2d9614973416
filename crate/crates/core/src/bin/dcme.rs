use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dcme::harness::{self, ExperimentConfig, Format, RunOptions};
use dcme::protocol::{multi_agent_params, two_agent_params};
use dcme::validate::{run_default, VALIDATOR_NAMES};
use dcme::{Error, Norm, Result};

#[derive(Parser)]
#[command(name = "dcme", version, about = "Distributed covariance estimation under bit budgets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo sweep described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        dump_messages: Option<PathBuf>,
    },
    /// Evaluate a bound or coefficient. `--args` is inline JSON or a path to a JSON file.
    Theory {
        op: String,
        #[arg(long)]
        args: String,
    },
    /// Run concentration validators (all of them when no names are given).
    Validate {
        names: Vec<String>,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the scheme constants for the given accuracy target.
    Params {
        #[arg(value_enum)]
        scheme: ParamsScheme,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        d1: usize,
        #[arg(long)]
        d2: usize,
        #[arg(long, default_value = "op")]
        norm: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamsScheme {
    TwoAgent,
    Multi,
}

enum Outcome {
    Ok,
    ValidationFailed,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Simulate { config, out, format, threads, dump_messages } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Ok(seed) = std::env::var("DCME_SEED") {
                cfg.seed = seed.trim().parse().map_err(|_| Error::Config(format!("DCME_SEED `{seed}` is not a u64")))?;
            }
            if let Some(f) = format {
                cfg.format = match f {
                    FormatArg::Csv => Format::Csv,
                    FormatArg::Json => Format::Json,
                };
            }
            if threads.is_some() {
                cfg.threads = threads;
            }
            if out.is_some() {
                cfg.out = out;
            }
            let records = harness::run_sweep_with(&cfg, &RunOptions { dump_messages })?;
            match &cfg.out {
                Some(path) => harness::emit(&records, cfg.format, path)?,
                None => {
                    let stdout = std::io::stdout().lock();
                    match cfg.format {
                        Format::Csv => harness::write_csv(&records, stdout)?,
                        Format::Json => harness::write_json(&records, stdout)?,
                    }
                }
            }
            for s in harness::summarize(&records) {
                eprintln!(
                    "m={} n={} B1={} B2={} trials={} op={:.6}±{:.6} fr={:.6}±{:.6} errors={:.4}",
                    s.m, s.n, s.b1, s.b2, s.trials, s.mean_op, s.stderr_op, s.mean_fr, s.stderr_fr, s.error_rate
                );
            }
            Ok(Outcome::Ok)
        }
        Command::Theory { op, args } => {
            let value: serde_json::Value = match serde_json::from_str(&args) {
                Ok(v) => v,
                Err(_) => serde_json::from_str(&std::fs::read_to_string(&args)?)?,
            };
            print_json(&harness::theory_eval(&op, &value)?)?;
            Ok(Outcome::Ok)
        }
        Command::Validate { names, trials, seed } => {
            let names: Vec<String> =
                if names.is_empty() { VALIDATOR_NAMES.iter().map(|s| s.to_string()).collect() } else { names };
            let reports = names.iter().map(|n| run_default(n, trials, seed)).collect::<Result<Vec<_>>>()?;
            print_json(&reports)?;
            Ok(if reports.iter().all(|r| r.pass) { Outcome::Ok } else { Outcome::ValidationFailed })
        }
        Command::Params { scheme, sigma, eps, d1, d2, norm } => {
            match scheme {
                ParamsScheme::TwoAgent => print_json(&two_agent_params(sigma, eps, d1, d2, norm.parse::<Norm>()?)?)?,
                ParamsScheme::Multi => print_json(&multi_agent_params(sigma, eps, d1 + d2)?)?,
            }
            Ok(Outcome::Ok)
        }
    }
}
