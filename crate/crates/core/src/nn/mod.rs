//! Minimal sequential neural-network engine.

pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use init::glorot_uniform;
pub use layers::{ActivationKind, LayerCache, Padding, Param, ParamGrads};
pub use loss::{cross_entropy_loss, mse_loss, LossResult};
pub use optim::{OptimizerConfig, OptimizerState};
pub use tensor::{Scalar, Tensor};
