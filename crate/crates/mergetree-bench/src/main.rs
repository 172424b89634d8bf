//! `bench` — measurement and verification harness for the mergetree window
//! join.
//!
//! Three subcommands:
//!
//! * `bench run --experiment <name|file> --out results.csv` runs a built-in
//!   or file-described sweep and writes one CSV row per repetition.
//! * `bench verify --config <file>` replays one configuration against the
//!   nested-loop oracle and reports the first divergence, if any.
//! * `bench cost --model <name> --params <file>` evaluates an analytical
//!   cost model and prints its per-step breakdown as CSV.
//!
//! Run descriptions are `key=value` text files; see `config.rs` for the
//! accepted keys. The `BENCH_THREADS` environment variable caps the worker
//! count of every run, which keeps result files honest about the hardware
//! they came from.

mod config;
mod cost_cmd;
mod experiments;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{check_against_oracle, parse_key_map, resolve, workload_hash};

#[derive(Parser)]
#[command(name = "bench", version, about = "Window band-join benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named or file-described experiment and write a CSV of results.
    Run {
        /// Built-in experiment name, or path to a key=value description.
        #[arg(long)]
        experiment: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay one configuration against the nested-loop oracle.
    Verify {
        /// Path to a key=value run description.
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate an analytical cost model and print CSV to stdout.
    Cost {
        /// direct, btree, chained, round-robin, merge-tree or partitioned.
        #[arg(long)]
        model: String,
        /// Path to a key=value parameter file.
        #[arg(long)]
        params: PathBuf,
    },
    /// List the built-in experiments.
    List,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { experiment, out } => {
            let spec = experiments::load(&experiment)?;
            let file = File::create(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            let mut writer = BufWriter::new(file);
            experiments::run_experiment(&spec, &mut writer)?;
            writer.flush()?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Verify { config } => verify(&config),
        Command::Cost { model, params } => {
            let text = std::fs::read_to_string(&params)
                .with_context(|| format!("reading {}", params.display()))?;
            let stdout = std::io::stdout();
            cost_cmd::run(&model, &text, &mut stdout.lock())
        }
        Command::List => {
            for spec in experiments::registry() {
                println!("{:<22} {}", spec.name, spec.summary);
            }
            Ok(())
        }
    }
}

/// Oracle scale limits: a nested-loop pass stays tractable only for small
/// windows and short streams, so `verify` refuses anything bigger.
const VERIFY_MAX_WINDOW: usize = 1 << 12;
const VERIFY_MAX_TUPLES: usize = 100_000;

fn verify(path: &std::path::Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let cfg = resolve(&parse_key_map(&text)?)?;
    let w = cfg.engine.window_r.max(cfg.engine.window_s);
    if w > VERIFY_MAX_WINDOW {
        bail!("verify needs window_size <= {VERIFY_MAX_WINDOW}, got {w}");
    }
    if cfg.total_arrivals() > VERIFY_MAX_TUPLES {
        bail!(
            "verify needs at most {VERIFY_MAX_TUPLES} arrivals, got {}",
            cfg.total_arrivals()
        );
    }
    let arrivals = cfg.arrivals(0)?;
    let output = check_against_oracle(&cfg, config::Executor::Parallel, &arrivals)?;
    println!(
        "ok: {} arrivals (workload {:016x}), {} join records match the oracle",
        arrivals.len(),
        workload_hash(&arrivals),
        output.results.len()
    );
    Ok(())
}
