//! Unsupervised continual learning with momentum contrast through the
//! experiment harness. No labels reach the trainer; the representation is
//! judged by retraining the output layer on the labeled evaluation memory.
//!
//! ```text
//! cargo run --release --example moco_unsupervised -- [out_dir] [memory_size]
//! ```

use std::path::PathBuf;

use clrep::algorithms::Objective;
use clrep::harness::{run_experiment, ExperimentConfig, RunOptions};

fn main() -> clrep::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/moco".into()));
    let memory: usize = args.next().map(|s| s.parse().expect("memory size")).unwrap_or(200);

    let mut cfg = ExperimentConfig::desk_proxy(&format!("moco_m{memory}"), &out, 0);
    cfg.algorithm.objective = Objective::Moco;
    cfg.scenario.supervised = false;
    cfg.memory.train_size = memory;
    let ledger = run_experiment(&cfg, RunOptions { resume: true, stop_after: None })?;
    for r in &ledger.reports {
        println!("t={} gd_accuracy {:.3}", r.task_index, r.gd_accuracy);
    }
    println!("run directory: {}", cfg.run_dir().display());
    Ok(())
}
