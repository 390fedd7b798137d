use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use clrep::harness::{emit_report, load_ledgers, run_experiment, ExperimentConfig, RunOptions};
use clrep::memory::ExemplarMemory;

#[derive(Parser)]
#[command(version, about = "Continual representation learning benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one run described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Continue from the last committed task of an interrupted run.
        #[arg(long)]
        resume: bool,
        /// Stop after this task (useful for staged runs).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Aggregate run directories into CSV tables and SVG plots.
    Report {
        /// Glob over run directories, e.g. `runs/*`.
        #[arg(long)]
        runs: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a memory manifest written by a run.
    InspectMemory {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> clrep::Result<()> {
    match cmd {
        Command::Run { config, resume, stop_after } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ledger = run_experiment(&cfg, RunOptions { resume, stop_after })?;
            println!("{}: {}/{} tasks committed", ledger.run_id, ledger.tasks.len(), ledger.num_tasks);
            if let Some(r) = ledger.final_report() {
                let raw = r.raw_accuracy.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
                println!("t={} raw={} gd={:.4}", r.task_index, raw, r.gd_accuracy);
            }
        }
        Command::Report { runs, out } => {
            let ledgers = load_ledgers(&runs)?;
            let summary = emit_report(&ledgers, &out)?;
            println!("{} runs, {} scenarios", ledgers.len(), summary.scenarios.len());
            for f in summary.files {
                println!("{}", f.display());
            }
        }
        Command::InspectMemory { manifest } => {
            let m = ExemplarMemory::from_json(&std::fs::read_to_string(&manifest)?)?;
            println!("policy: {:?}", m.policy());
            println!("capacity: {}  quota: {}", m.capacity(), m.quota());
            println!("stored: {}  imbalance: {}", m.len(), m.imbalance());
            for (c, n) in m.class_counts() {
                println!("  class {c:>4}: {n}");
            }
        }
    }
    Ok(())
}
