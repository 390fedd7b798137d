//! The class-balanced greedy replay memory, the per-class-quota evaluation
//! memory, and balanced replay batches drawn from them.

use clrep::data::synthetic::{generate, GlyphConfig};
use clrep::data::{build_class_il, TaskView};
use clrep::memory::{BalancedSampler, ExemplarMemory};
use clrep::rng::rng_from_seed;

fn main() -> clrep::Result<()> {
    let data = generate(&GlyphConfig::default())?;
    let seq = build_class_il(&data, &[2; 5], 0)?;
    let mut memory_e = ExemplarMemory::capacity_balanced(50, 1).with_num_classes(10);
    let mut memory_o = ExemplarMemory::per_class_quota(20, 2).with_num_classes(10);

    for t in 1..=seq.len() {
        let task = seq.task(t)?;
        memory_e.greedy_update(task.train.iter().map(|&i| data.train.example(i)))?;
        memory_o.quota_update(&TaskView::labeled(&data.train, &task.train))?;
        println!(
            "after task {t}: M_e {}/{} imbalance {} {:?} | M_o {}",
            memory_e.len(),
            memory_e.capacity(),
            memory_e.imbalance(),
            memory_e.class_counts().values().collect::<Vec<_>>(),
            memory_o.len()
        );
    }

    let mut sampler = BalancedSampler::new(&memory_e, rng_from_seed(3))?;
    let batch = sampler.next_batch(20);
    let mut per_class = std::collections::BTreeMap::new();
    for ex in &batch {
        *per_class.entry(ex.label).or_insert(0) += 1;
    }
    println!("one replay batch of 20: {per_class:?}");
    println!("manifest:\n{}", memory_e.to_json()?.lines().take(6).collect::<Vec<_>>().join("\n"));
    Ok(())
}
