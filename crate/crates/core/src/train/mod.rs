//! Training loops: unsupervised autoencoders, supervised classifiers, the
//! two-stage transfer procedure, evaluation and augmentation.

mod augment;
mod config;
mod dataset;
mod loops;

pub use augment::{augment, flip_horizontal, shift, AugmentPolicy};
pub use config::{TrainConfig, TrainHistory};
pub use dataset::{Content, LabeledDataset, Split};
pub use loops::{
    assemble_transfer, base_fingerprint, evaluate, pretrain_base, train_autoencoder, train_classifier,
    transfer_stage_one, transfer_stage_two, two_stage_transfer_train, Autoencoder, Evaluation, TransferOutcome,
};
