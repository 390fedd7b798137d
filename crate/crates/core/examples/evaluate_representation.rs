//! The evaluation suite on one continually trained encoder: raw accuracy,
//! output-layer retraining on a class-balanced memory, the task-confusion
//! profile before and after, a full-data linear probe, and downstream
//! transfer. The encoder checksum is printed before and after to show that
//! evaluation never touches it.

use std::collections::BTreeMap;

use candle_core::Device;
use clrep::algorithms::{train_task, AlgorithmSpec, ModelState, Objective, TaskData, TrainEnv};
use clrep::data::synthetic::{generate, GlyphConfig};
use clrep::data::{build_class_il, AugmentConfig, TaskView};
use clrep::eval::{
    bias_profile, downstream_transfer, evaluate_accuracy, linear_probe, retrain_output_layer, ProbeConfig, TransferConfig,
};
use clrep::memory::ExemplarMemory;
use clrep::model::{ClassifierHead, EncoderArch};
use clrep::rng::{rng_from_seed, SeedStreams};

fn show(name: &str, m: &[Vec<f64>]) {
    println!("{name}");
    for row in m {
        println!("  {}", row.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" "));
    }
}

fn main() -> clrep::Result<()> {
    let dev = Device::Cpu;
    let data = generate(&GlyphConfig::default())?;
    let seq = build_class_il(&data, &[2; 5], 0)?;
    let augment = AugmentConfig::default();
    let env = TrainEnv { augment: &augment, streams: SeedStreams::new(0), device: dev.clone() };
    let mut spec = AlgorithmSpec::new(Objective::Ce);
    spec.hyperparameters.epochs = 5;

    // plain fine-tuning without replay: the textbook case of head bias
    let mut state = ModelState::init(EncoderArch::resnet_tiny(3), &spec, &env.streams)?;
    let mut memory_o = ExemplarMemory::per_class_quota(20, 5);
    for t in 1..=seq.len() {
        train_task(&mut state, &TaskData::from_sequence(&seq, &data.train, t)?, None, &spec, &env)?;
        memory_o.quota_update(&TaskView::labeled(&data.train, &seq.task(t)?.train))?;
    }

    let enc = &state.model.encoder;
    let before = enc.checksum()?;
    let t = seq.len();
    let test = seq.cumulative_test_set(t)?;
    let owner: BTreeMap<u32, usize> = seq.class_to_task();
    let head = state.model.classifier.as_ref().expect("classifier");
    let raw = evaluate_accuracy(enc, head, &data.test, &test, None, &dev)?;
    show("task confusion, trained head", &bias_profile(enc, head, &data.test, &test, &owner, t, &dev)?);

    let probe = ProbeConfig::default();
    let gd_head = ClassifierHead::Single(retrain_output_layer(
        enc,
        &memory_o,
        &data.train,
        &seq.seen_classes(t)?,
        &probe,
        &mut rng_from_seed(1),
        &dev,
    )?);
    let gd = evaluate_accuracy(enc, &gd_head, &data.test, &test, None, &dev)?;
    show("task confusion, retrained head", &bias_profile(enc, &gd_head, &data.test, &test, &owner, t, &dev)?);

    let all = seq.cumulative_train_set(t)?;
    let full = ClassifierHead::Single(linear_probe(enc, &data.train, &all, &probe, &mut rng_from_seed(2), &dev)?);
    let full_acc = evaluate_accuracy(enc, &full, &data.test, &test, None, &dev)?;
    println!("raw {raw:.3}  retrained on M_o {gd:.3}  full-data probe {full_acc:.3}  bias gap {:+.3}", gd - raw);

    let down = generate(&GlyphConfig::downstream("glyphs_down", 77, 5))?;
    let cfg = TransferConfig { epochs: 5, ..TransferConfig::default() };
    let acc = downstream_transfer(enc, &down, data.train.name(), &cfg, &augment, &mut rng_from_seed(3), &dev)?;
    println!("downstream fine-tuning accuracy {acc:.3}");

    let after = enc.checksum()?;
    println!("encoder checksum {} ({})", &before[..16], if before == after { "unchanged" } else { "CHANGED" });
    Ok(())
}
