//! Privacy-preserving edge/server image classification over latent vectors.
//!
//! Edge devices train convolutional autoencoders on their local images and ship
//! only encoder outputs (latents) to a hub. The hub aggregates `[Z, Y]`, trains a
//! classifier on latents, serves predictions, and can reconstruct images through
//! per-device decoders registered out of band.

pub mod bench;
pub mod edge;
pub mod error;
pub mod hub;
pub mod model;
pub mod nn;
pub mod train;
pub mod zoo;

pub use edge::{partition_dataset, DeviceNode, LatentRecord, PartitionMode, Sink, UNLABELED};
pub use error::{Error, Result};
pub use hub::{Ack, Hub};
pub use model::{LayerParams, Model};
pub use nn::{OptimizerConfig, Tensor};
pub use train::{evaluate, LabeledDataset, Split, TrainConfig, TrainHistory};
pub use zoo::{CompressionRatio, Family, LayerSpec, ModelSpec};
