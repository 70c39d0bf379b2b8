//! Declarative architectures: autoencoders by compression ratio, vanilla
//! classifier families, the transfer assembly, shape walks and parameter counts.

mod builders;
mod ratio;
mod spec;

pub use builders::{
    build_autoencoder, build_transfer_model, build_vanilla_classifier, standin_base, AutoencoderSpec, Family,
    DEFAULT_HIDDEN_WIDTH,
};
pub use ratio::{compression_ratio, CompressionRatio};
pub use spec::{count_parameters, infer_shapes, LayerSpec, ModelSpec, Role, SPEC_VERSION};
