//! Stops a run after two tasks, resumes it, and checks that the metrics are
//! byte-identical to an uninterrupted run of the same config.

use std::fs;

use clrep::harness::{run_experiment, ExperimentConfig, RunOptions, METRICS_FILE};

fn main() -> clrep::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut straight = ExperimentConfig::desk_proxy("ft_ce", &dir.path().join("straight"), 3);
    straight.memory.train_size = 20;
    straight.algorithm.hyperparameters.epochs = 2;
    let mut staged = straight.clone();
    staged.output_dir = dir.path().join("staged");

    run_experiment(&straight, RunOptions::default())?;
    let partial = run_experiment(&staged, RunOptions { resume: false, stop_after: Some(2) })?;
    println!("interrupted after {} of {} tasks", partial.tasks.len(), partial.num_tasks);
    let resumed = run_experiment(&staged, RunOptions { resume: true, stop_after: None })?;
    println!("resumed to {} tasks", resumed.tasks.len());

    let a = fs::read(straight.run_dir().join(METRICS_FILE))?;
    let b = fs::read(staged.run_dir().join(METRICS_FILE))?;
    println!("metrics.csv identical: {}", a == b);
    Ok(())
}
