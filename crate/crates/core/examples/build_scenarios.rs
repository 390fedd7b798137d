//! Splits one dataset into Class-IL, Task-IL and Data-IL task sequences and
//! prints what each task sees.

use clrep::data::synthetic::{generate, GlyphConfig};
use clrep::data::{build_class_il, build_data_il, build_task_il};

fn main() -> clrep::Result<()> {
    let data = generate(&GlyphConfig::default())?;
    let seed = 7;
    let sequences = [
        build_class_il(&data, &[2; 5], seed)?,
        build_task_il(&data, &[4, 3, 3], seed)?,
        build_data_il(&data, 4, seed)?,
    ];
    for seq in &sequences {
        println!("{} ({}), class order {:?}", seq.sequence_name, seq.mode, seq.class_order);
        for t in 1..=seq.len() {
            let task = seq.task(t)?;
            println!(
                "  task {t}: classes {:?}, {} train, {} cumulative test",
                task.spec.class_set,
                task.train.len(),
                seq.cumulative_test_set(t)?.len()
            );
        }
    }
    // The manifest pins the split; a run directory stores it next to the config.
    let manifest = sequences[0].to_manifest_json()?;
    println!("class_il manifest: {} bytes", manifest.len());
    Ok(())
}
