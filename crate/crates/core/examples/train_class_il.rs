//! Drives the trainer directly: FT(CE) and SS-IL over five Class-IL tasks
//! with a replay memory, printing raw and Task-IL accuracy after each task.
//!
//! ```text
//! cargo run --release --example train_class_il -- [memory_size] [epochs]
//! ```

use candle_core::Device;
use clrep::algorithms::{train_task, AlgorithmSpec, ClassifierStrategy, ModelState, Objective, TaskData, TrainEnv};
use clrep::data::synthetic::{generate, GlyphConfig};
use clrep::data::{build_class_il, AugmentConfig};
use clrep::eval::evaluate_accuracy;
use clrep::memory::ExemplarMemory;
use clrep::model::EncoderArch;
use clrep::rng::{streams, SeedStreams};

fn main() -> clrep::Result<()> {
    let mut args = std::env::args().skip(1);
    let memory_size: usize = args.next().map(|s| s.parse().expect("memory size")).unwrap_or(100);
    let epochs: usize = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(5);

    let data = generate(&GlyphConfig::default())?;
    let seq = build_class_il(&data, &[2; 5], 0)?;
    let augment = AugmentConfig::default();
    let env = TrainEnv { augment: &augment, streams: SeedStreams::new(0), device: Device::Cpu };
    let owner = seq.class_to_task();

    for strategy in [ClassifierStrategy::Standard, ClassifierStrategy::Ssil] {
        let mut spec = AlgorithmSpec::new(Objective::Ce).with_strategy(strategy);
        spec.hyperparameters.epochs = epochs;
        println!("{} with |M_e| = {memory_size}", spec.label());
        let mut state = ModelState::init(EncoderArch::resnet_tiny(3), &spec, &env.streams)?;
        let mut memory = ExemplarMemory::capacity_balanced(memory_size, env.streams.seed(streams::MEMORY, 0));
        for t in 1..=seq.len() {
            let td = TaskData::from_sequence(&seq, &data.train, t)?;
            let log = train_task(&mut state, &td, (memory_size > 0).then_some(&memory), &spec, &env)?;
            let task = seq.task(t)?;
            memory.greedy_update(task.train.iter().map(|&i| data.train.example(i)))?;

            let test = seq.cumulative_test_set(t)?;
            let head = state.model.classifier.as_ref().expect("CE models carry a classifier");
            let raw = evaluate_accuracy(&state.model.encoder, head, &data.test, &test, None, &env.device)?;
            let til = evaluate_accuracy(&state.model.encoder, head, &data.test, &test, Some(&owner), &env.device)?;
            let last = log.records.last().map(|r| r.loss_total).unwrap_or(f64::NAN);
            println!(
                "  t={t}: {} steps ({} current / {} replayed), last loss {last:.3}, class-IL {raw:.3}, task-IL {til:.3}",
                log.steps, log.current_seen, log.memory_seen
            );
        }
    }
    Ok(())
}
