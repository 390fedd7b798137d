//! End-to-end runs of the experiment harness on a tiny synthetic dataset.

use std::fs;
use std::path::Path;

use clrep::algorithms::{AlgorithmSpec, Objective};
use clrep::data::synthetic::GlyphConfig;
use clrep::data::ScenarioMode;
use clrep::harness::{
    accuracy_series, emit_report, load_ledgers, run_experiment, DatasetConfig, DownstreamConfig, ExperimentConfig, LearnerKind,
    MemoryConfig, RunOptions, ScenarioConfig, LEDGER_FILE, METRICS_FILE,
};
use clrep::Error;

fn tiny(out: &Path, run_id: &str, objective: Objective) -> ExperimentConfig {
    let mut algorithm = AlgorithmSpec::new(objective);
    algorithm.hyperparameters.epochs = 1;
    algorithm.hyperparameters.batch_size = 8;
    algorithm.hyperparameters.moco_queue = 16;
    ExperimentConfig {
        run_id: run_id.into(),
        output_dir: out.to_path_buf(),
        seed: 4,
        learner: LearnerKind::Continual,
        architecture: "resnet_tiny".into(),
        dataset: DatasetConfig::synthetic(
            "glyphs",
            GlyphConfig { num_classes: 4, train_per_class: 10, test_per_class: 4, ..Default::default() },
        ),
        scenario: ScenarioConfig {
            mode: ScenarioMode::ClassIl,
            task_sizes: None,
            num_tasks: Some(2),
            seed: None,
            supervised: objective != Objective::Moco,
        },
        algorithm,
        memory: MemoryConfig { train_size: 6, eval_quota: 3 },
        probe: Default::default(),
        augment: Default::default(),
        transfer: clrep::eval::TransferConfig { epochs: 1, ..Default::default() },
        downstream: vec![DownstreamConfig {
            id: "down".into(),
            root: None,
            synthetic: Some(GlyphConfig::downstream("down", 77, 2)),
            every_task: false,
        }],
    }
}

#[test]
fn two_task_run_writes_two_checkpoints_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "ft", Objective::Ce);
    let ledger = run_experiment(&cfg, RunOptions::default()).unwrap();
    assert!(ledger.complete);
    assert_eq!(ledger.tasks.len(), 2);
    assert_eq!(ledger.reports.len(), 2);
    for t in 1..=2 {
        let d = ledger.task_dir(t);
        assert!(d.join("checkpoint.safetensors").is_file());
        assert!(d.join("report.json").is_file());
    }
    let last = ledger.final_report().unwrap();
    assert!(last.downstream.contains_key("down"));
    assert_eq!(last.task_confusion_gd.len(), 2);
    let stored = ExperimentConfig::load(&cfg.run_dir().join("config.toml")).unwrap();
    assert_eq!(stored, cfg);
    // the same run id cannot be started twice
    assert!(matches!(run_experiment(&cfg, RunOptions::default()), Err(Error::Config(_))));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    for objective in [Objective::Ce, Objective::Moco] {
        let dir = tempfile::tempdir().unwrap();
        let a = tiny(dir.path(), "straight", objective);
        run_experiment(&a, RunOptions::default()).unwrap();
        let b = tiny(dir.path(), "crashy", objective);
        let partial = run_experiment(&b, RunOptions { resume: false, stop_after: Some(1) }).unwrap();
        assert_eq!(partial.tasks.len(), 1);
        assert!(!partial.complete);
        // leftover scratch from a crash in the middle of task 2
        fs::create_dir_all(b.run_dir().join("tasks/task_002.tmp")).unwrap();
        let done = run_experiment(&b, RunOptions { resume: true, stop_after: None }).unwrap();
        assert!(done.complete);
        let strip = |p: &Path| {
            fs::read_to_string(p.join(METRICS_FILE))
                .unwrap()
                .lines()
                .map(|l| l.split_once(',').map(|x| x.1.to_string()).unwrap_or_default())
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.run_dir()), strip(&b.run_dir()), "{objective:?}");
        assert_eq!(
            fs::read(a.run_dir().join("losses.csv")).unwrap(),
            fs::read(b.run_dir().join("losses.csv")).unwrap()
        );
    }
}

#[test]
fn resume_with_a_different_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "r", Objective::Ce);
    run_experiment(&cfg, RunOptions { resume: false, stop_after: Some(1) }).unwrap();
    let mut changed = cfg.clone();
    changed.memory.train_size = 2;
    match run_experiment(&changed, RunOptions { resume: true, stop_after: None }) {
        Err(Error::ResumeMismatch(diff)) => assert!(diff.contains("memory.train_size"), "{diff}"),
        other => panic!("expected a mismatch, got {other:?}"),
    }
}

#[test]
fn report_groups_by_scenario_and_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "ft", Objective::Ce);
    run_experiment(&cfg, RunOptions::default()).unwrap();
    let mut data_il = tiny(dir.path(), "data", Objective::Ce);
    data_il.scenario.mode = ScenarioMode::DataIl;
    data_il.memory.train_size = 0;
    run_experiment(&data_il, RunOptions::default()).unwrap();

    let ledgers = load_ledgers(&format!("{}/*", dir.path().display())).unwrap();
    assert_eq!(ledgers.len(), 2);
    let out = dir.path().join("report");
    let summary = emit_report(&ledgers, &out).unwrap();
    assert_eq!(summary.scenarios.len(), 2);
    assert!(summary.files.iter().any(|f| f.extension().is_some_and(|e| e == "svg")));

    // plotted values come straight from the per-run metrics
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let gap = fs::read_to_string(out.join("bias_gap.csv")).unwrap();
    for line in gap.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let row = metrics
            .lines()
            .find(|m| m.starts_with(&format!("{},{},", cols[0], cols[5])))
            .unwrap();
        assert!(row.contains(cols[7]));
    }

    let mixed: Vec<_> = ledgers.iter().flat_map(|l| l.reports.iter()).collect();
    assert!(matches!(accuracy_series(&mixed), Err(Error::Grouping(_))));

    let empty = dir.path().join("empty_report");
    assert!(emit_report(&[], &empty).is_err());
    assert!(!empty.exists());
    assert!(ledgers.iter().all(|l| l.run_dir.join(LEDGER_FILE).is_file()));
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.dataset.load().unwrap();
            n += 1;
        }
    }
    assert!(n >= 3);
}
