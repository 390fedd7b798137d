//! Runs a grid of algorithm × memory size × seed on the desk proxy and
//! prints the final-task accuracies, then writes the report.
//!
//! ```text
//! cargo run --release --example experiment_grid -- [out_dir] [seeds] [memories] [objectives] [modes]
//! cargo run --release --example experiment_grid -- runs/grid 0,1,2 20,200,1000 ce,moco class_il
//! ```

use std::path::PathBuf;
use std::time::Instant;

use clrep::algorithms::Objective;
use clrep::data::ScenarioMode;
use clrep::harness::{emit_report, run_experiment, ExperimentConfig, RunOptions};

fn list<T>(arg: Option<String>, default: &str, parse: impl Fn(&str) -> T) -> Vec<T> {
    arg.unwrap_or_else(|| default.to_string()).split(',').map(|s| parse(s.trim())).collect()
}

fn main() -> clrep::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/grid".into()));
    let seeds = list(args.next(), "0", |s| s.parse::<u64>().expect("seed"));
    let memories = list(args.next(), "20", |s| s.parse::<usize>().expect("memory size"));
    let objectives = list(args.next(), "ce", |s| match s {
        "ce" => Objective::Ce,
        "supcon" => Objective::Supcon,
        "moco" => Objective::Moco,
        other => panic!("unknown objective {other}"),
    });
    let modes = list(args.next(), "class_il", |s| match s {
        "class_il" => ScenarioMode::ClassIl,
        "task_il" => ScenarioMode::TaskIl,
        "data_il" => ScenarioMode::DataIl,
        other => panic!("unknown mode {other}"),
    });

    let mut ledgers = Vec::new();
    println!("{:<34} {:>8} {:>8} {:>8} {:>7}", "run", "raw", "gd", "gap", "secs");
    for &mode in &modes {
        for &objective in &objectives {
            for &m in &memories {
                for &seed in &seeds {
                    let id = format!("{}_{}_m{}_s{}", mode, format!("{objective:?}").to_lowercase(), m, seed);
                    let mut cfg = ExperimentConfig::desk_proxy(&id, &out, seed);
                    cfg.scenario.mode = mode;
                    cfg.scenario.supervised = objective != Objective::Moco;
                    cfg.algorithm.objective = objective;
                    cfg.memory.train_size = m;
                    let clock = Instant::now();
                    let ledger = run_experiment(&cfg, RunOptions { resume: true, stop_after: None })?;
                    let r = ledger.final_report().expect("completed run");
                    let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
                    println!(
                        "{:<34} {:>8} {:>8.3} {:>8} {:>7.1}",
                        id,
                        f(r.raw_accuracy),
                        r.gd_accuracy,
                        f(r.bias_gap),
                        clock.elapsed().as_secs_f64()
                    );
                    ledgers.push(ledger);
                }
            }
        }
    }
    let summary = emit_report(&ledgers, &out.join("report"))?;
    println!("report: {} files under {}", summary.files.len(), out.join("report").display());
    Ok(())
}
