use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::OptimizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    #[serde(default)]
    pub augment: bool,
    /// Stop after this many epochs without a loss improvement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
}

impl TrainConfig {
    /// Reconstruction training: rmsprop, no augmentation.
    pub fn autoencoder() -> Self {
        Self { epochs: 50, batch_size: 32, optimizer: OptimizerConfig::rmsprop(), seed: 0, augment: false, patience: None }
    }

    /// Supervised training: adam with augmentation on raw images.
    pub fn classifier() -> Self {
        Self { epochs: 50, batch_size: 32, optimizer: OptimizerConfig::adam(), seed: 0, augment: true, patience: None }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_optimizer(mut self, optimizer: OptimizerConfig) -> Self {
        self.optimizer = optimizer;
        self
    }

    pub fn with_augment(mut self, augment: bool) -> Self {
        self.augment = augment;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::classifier()
    }
}

/// Per-epoch record of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
    /// Reconstruction MSE for autoencoders, running training accuracy for classifiers.
    pub metrics: Vec<f64>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.losses.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}
