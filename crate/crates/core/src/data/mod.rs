//! Image datasets, task-sequence construction and view augmentation.

mod augment;
mod folder;
mod scenario;
pub mod synthetic;

pub use augment::{augment, AugmentConfig, ViewPolicy, Views};
pub use folder::{load_image_folder, write_image_folder};
pub use scenario::{
    build_class_il, build_data_il, build_task_il, ScenarioMode, Task, TaskSequence, TaskSpec,
};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// A borrowed view of one example. Pixels are channel-major (C×H×W) in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct LabeledExample<'a> {
    pub image: &'a [f32],
    pub label: u32,
    pub index: usize,
}

/// One split of a labeled image dataset, stored contiguously.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    shape: ImageShape,
    class_names: Vec<String>,
    pixels: Vec<f32>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: ImageShape,
        class_names: Vec<String>,
        pixels: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if pixels.len() != labels.len() * shape.numel() {
            return Err(Error::argument(format!(
                "pixel buffer holds {} values, expected {} images of {}",
                pixels.len(),
                labels.len(),
                shape.numel()
            )));
        }
        let k = class_names.len() as u32;
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::argument(format!("label {bad} outside [0, {k})")));
        }
        Ok(Self { name: name.into(), shape, class_names, pixels, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.shape.numel();
        &self.pixels[index * n..(index + 1) * n]
    }

    pub fn example(&self, index: usize) -> LabeledExample<'_> {
        LabeledExample { image: self.image(index), label: self.labels[index], index }
    }

    /// Example indices grouped by class id.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l as usize].push(i);
        }
        by_class
    }

    /// Stacks the given examples into an `N×C×H×W` tensor without augmentation.
    pub fn batch_tensor(&self, indices: &[usize], device: &Device) -> Result<Tensor> {
        let n = self.shape.numel();
        let mut buf = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::argument(format!("example index {i} out of range")));
            }
            buf.extend_from_slice(self.image(i));
        }
        images_to_tensor(buf, indices.len(), self.shape, device)
    }
}

pub(crate) fn images_to_tensor(
    buf: Vec<f32>,
    count: usize,
    shape: ImageShape,
    device: &Device,
) -> Result<Tensor> {
    Ok(Tensor::from_vec(buf, (count, shape.channels, shape.height, shape.width), device)?)
}

/// The examples of one task as seen by a consumer. Labels are always present
/// in the underlying dataset; `labels_visible` says whether the consumer may
/// read them.
#[derive(Debug, Clone, Copy)]
pub struct TaskView<'a> {
    pub dataset: &'a Dataset,
    pub indices: &'a [usize],
    pub labels_visible: bool,
}

impl<'a> TaskView<'a> {
    pub fn labeled(dataset: &'a Dataset, indices: &'a [usize]) -> Self {
        Self { dataset, indices, labels_visible: true }
    }

    pub fn unlabeled(dataset: &'a Dataset, indices: &'a [usize]) -> Self {
        Self { dataset, indices, labels_visible: false }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Labels in view order, or a protocol error when they are hidden.
    pub fn labels(&self) -> Result<Vec<u32>> {
        if !self.labels_visible {
            return Err(Error::protocol("labels are hidden from this consumer"));
        }
        Ok(self.indices.iter().map(|&i| self.dataset.label(i)).collect())
    }
}

/// Train and test splits sharing one label space.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    pub fn new(train: Dataset, test: Dataset) -> Result<Self> {
        if train.shape() != test.shape() || train.class_names() != test.class_names() {
            return Err(Error::argument("train and test splits disagree on shape or classes"));
        }
        Ok(Self { train, test })
    }

    pub fn name(&self) -> &str {
        self.train.name()
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    pub fn shape(&self) -> ImageShape {
        self.train.shape()
    }
}
