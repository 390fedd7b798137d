//! `<root>/<split>/<class_name>/<image files>` layout.
//!
//! Class ids follow the sorted class-directory names of the train split;
//! example indices follow sorted `(class, file name)` order within a split.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, ImageShape, SplitDataset};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

pub fn load_image_folder(root: &Path, name: &str) -> Result<SplitDataset> {
    let class_names = list_dirs(&root.join("train"))?;
    if class_names.is_empty() {
        return Err(Error::config(format!("no class directories under {}", root.join("train").display())));
    }
    let train = load_split(root, "train", name, &class_names, None)?;
    let test = load_split(root, "test", name, &class_names, Some(train.shape()))?;
    SplitDataset::new(train, test)
}

fn list_dirs(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if !dir.exists() {
        return Ok(files);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if ext.as_deref().is_some_and(|e| IMAGE_EXTENSIONS.contains(&e)) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_split(
    root: &Path,
    split: &str,
    name: &str,
    class_names: &[String],
    expected: Option<ImageShape>,
) -> Result<Dataset> {
    let split_dir = root.join(split);
    for extra in list_dirs(&split_dir)? {
        if !class_names.contains(&extra) {
            return Err(Error::config(format!("{split} split has class `{extra}` missing from train")));
        }
    }
    let mut shape = expected;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        for path in list_images(&split_dir.join(class))? {
            let img = image::open(&path)?;
            let channels = if img.color().has_color() { 3 } else { 1 };
            let this = ImageShape::new(channels, img.height() as usize, img.width() as usize);
            let want = *shape.get_or_insert(this);
            if want.height != this.height || want.width != this.width {
                return Err(Error::config(format!(
                    "{}: image is {}x{}, dataset uses {}x{}",
                    path.display(),
                    this.height,
                    this.width,
                    want.height,
                    want.width
                )));
            }
            push_chw(&img, want.channels, &mut pixels);
            labels.push(label as u32);
        }
    }
    let shape = shape.ok_or_else(|| Error::config(format!("{split} split contains no images")))?;
    Dataset::new(name, shape, class_names.to_vec(), pixels, labels)
}

fn push_chw(img: &image::DynamicImage, channels: usize, out: &mut Vec<f32>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if channels == 1 {
        let g = img.to_luma8();
        out.extend(g.as_raw().iter().map(|&v| v as f32 / 255.0));
        return;
    }
    let rgb = img.to_rgb8();
    let raw = rgb.as_raw();
    for c in 0..3 {
        for p in 0..w * h {
            out.push(raw[p * 3 + c] as f32 / 255.0);
        }
    }
}

/// Writes both splits as 8-bit PNGs in the directory layout read by
/// [`load_image_folder`].
pub fn write_image_folder(data: &SplitDataset, root: &Path) -> Result<()> {
    for (split, ds) in [("train", &data.train), ("test", &data.test)] {
        let shape = ds.shape();
        for class in ds.class_names() {
            fs::create_dir_all(root.join(split).join(class))?;
        }
        for i in 0..ds.len() {
            let img = ds.image(i);
            let class = &ds.class_names()[ds.label(i) as usize];
            let path = root.join(split).join(class).join(format!("{i:06}.png"));
            let (h, w) = (shape.height as u32, shape.width as u32);
            let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            if shape.channels == 1 {
                let buf: Vec<u8> = img.iter().map(|&v| to_u8(v)).collect();
                image::GrayImage::from_raw(w, h, buf)
                    .ok_or_else(|| Error::internal("gray buffer size"))?
                    .save(&path)?;
            } else {
                let plane = (h * w) as usize;
                let mut buf = Vec::with_capacity(plane * 3);
                for p in 0..plane {
                    for c in 0..3 {
                        buf.push(to_u8(img[c * plane + p]));
                    }
                }
                image::RgbImage::from_raw(w, h, buf)
                    .ok_or_else(|| Error::internal("rgb buffer size"))?
                    .save(&path)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, GlyphConfig};

    #[test]
    fn folder_round_trip_preserves_labels_and_quantized_pixels() {
        let cfg = GlyphConfig { num_classes: 3, train_per_class: 2, test_per_class: 1, ..GlyphConfig::default() };
        let data = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_image_folder(&data, dir.path()).unwrap();
        let back = load_image_folder(dir.path(), "glyphs").unwrap();
        assert_eq!(back.num_classes(), 3);
        assert_eq!(back.train.len(), 6);
        assert_eq!(back.test.len(), 3);
        assert_eq!(back.shape(), data.shape());
        // files are written in index order, so sorted order groups by class then index
        let mut by_class = data.train.indices_by_class().concat();
        by_class.sort_by_key(|&i| (data.train.label(i), i));
        for (j, &i) in by_class.iter().enumerate() {
            assert_eq!(back.train.label(j), data.train.label(i));
            for (a, b) in back.train.image(j).iter().zip(data.train.image(i)) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn test_split_with_unknown_class_is_rejected() {
        let cfg = GlyphConfig { num_classes: 2, train_per_class: 1, test_per_class: 1, ..GlyphConfig::default() };
        let data = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_image_folder(&data, dir.path()).unwrap();
        fs::create_dir_all(dir.path().join("test").join("zebra")).unwrap();
        assert!(matches!(load_image_folder(dir.path(), "x"), Err(Error::Config(_))));
    }
}
