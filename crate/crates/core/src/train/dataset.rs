use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// What the sample tensors hold; augmentation only applies to raw images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Content {
    Images,
    Latents,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<(Tensor, usize)>,
    pub split: Split,
    pub num_classes: usize,
    pub content: Content,
}

impl LabeledDataset {
    /// Checks that every tensor shares one shape and every label is in range.
    pub fn new(samples: Vec<(Tensor, usize)>, split: Split, num_classes: usize, content: Content) -> Result<Self> {
        if let Some((first, _)) = samples.first() {
            if let Some((odd, _)) = samples.iter().find(|(t, _)| t.shape() != first.shape()) {
                return Err(Error::Dataset(format!(
                    "mixed sample shapes {:?} and {:?}",
                    first.shape(),
                    odd.shape()
                )));
            }
        }
        if let Some(&(_, label)) = samples.iter().find(|(_, l)| *l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, classes: num_classes });
        }
        Ok(Self { samples, split, num_classes, content })
    }

    pub fn empty(split: Split, num_classes: usize, content: Content) -> Self {
        Self { samples: Vec::new(), split, num_classes, content }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|(t, _)| t.shape())
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|(_, l)| *l)
    }

    pub fn images(&self) -> impl Iterator<Item = &Tensor> + '_ {
        self.samples.iter().map(|(t, _)| t)
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in self.labels() {
            counts[l] += 1;
        }
        counts
    }
}
