//! Datasets, procedural source images, domain shifts and splits.

mod idx;
mod shift;
mod split;
mod synth;

pub use idx::{load_idx, parse_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use shift::{apply_shift, ShiftSpec};
pub use split::{stratified_partition, subsample_and_split, SplitSpec, Splits, TrainSize};
pub use synth::{synth_dataset, synth_dataset_with, Palette, SynthOptions};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `[n, channels, height, width]` with values in `[0, 1]`, plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Data(format!(
                "images must be [n, c, h, w], got {:?}",
                images.shape()
            )));
        }
        if images.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[channels, height, width]`.
    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Indices of each class in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by[l].push(i);
        }
        by
    }
}
