//! Generates the glyph proxy dataset, writes it as a PNG image folder and
//! loads it back through the folder reader.
//!
//! ```text
//! cargo run --example generate_dataset -- data/glyphs10
//! ```

use std::path::PathBuf;

use clrep::data::synthetic::{generate, GlyphConfig};
use clrep::data::{load_image_folder, write_image_folder};

fn main() -> clrep::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/glyphs10".into()));
    let data = generate(&GlyphConfig::default())?;
    let shape = data.train.shape();
    println!(
        "{}: {} train / {} test, {} classes, {}x{}x{}",
        data.train.name(),
        data.train.len(),
        data.test.len(),
        data.train.num_classes(),
        shape.channels,
        shape.height,
        shape.width
    );

    write_image_folder(&data, &root)?;
    let back = load_image_folder(&root, "glyphs10")?;
    // PNG stores 8-bit pixels, so the round trip is exact only up to quantization
    let max_err = data
        .train
        .image(0)
        .iter()
        .zip(back.train.image(0))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("reloaded {} train images from {}, max pixel error {max_err:.4}", back.train.len(), root.display());
    println!("point CLREP_DATA_ROOT at {} and use `root = \"...\"` in a config to train on it", root.parent().unwrap_or(&root).display());
    Ok(())
}
