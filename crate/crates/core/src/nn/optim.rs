use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Optimizer algorithm and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Rmsprop { lr: f64, rho: f64, eps: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { lr: f64, momentum: f64 },
}

impl OptimizerConfig {
    pub const fn rmsprop() -> Self {
        Self::Rmsprop { lr: 1e-3, rho: 0.9, eps: 1e-7 }
    }

    pub const fn adam() -> Self {
        Self::Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub const fn sgd_momentum() -> Self {
        Self::SgdMomentum { lr: 1e-3, momentum: 0.9 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Rmsprop { .. } => "rmsprop",
            Self::Adam { .. } => "adam",
            Self::SgdMomentum { .. } => "sgd-momentum",
        }
    }

    pub fn with_lr(self, new_lr: f64) -> Self {
        match self {
            Self::Rmsprop { rho, eps, .. } => Self::Rmsprop { lr: new_lr, rho, eps },
            Self::Adam { beta1, beta2, eps, .. } => Self::Adam { lr: new_lr, beta1, beta2, eps },
            Self::SgdMomentum { momentum, .. } => Self::SgdMomentum { lr: new_lr, momentum },
        }
    }
}

/// Accumulators for one parameter tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar> {
    config: OptimizerConfig,
    /// Second moment (rmsprop, adam).
    second: Vec<T>,
    /// First moment (adam) or velocity (sgd-momentum).
    first: Vec<T>,
    shape: Vec<usize>,
    step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        let (first, second) = match config {
            OptimizerConfig::Rmsprop { .. } => (Vec::new(), vec![T::zero(); n]),
            OptimizerConfig::Adam { .. } => (vec![T::zero(); n], vec![T::zero(); n]),
            OptimizerConfig::SgdMomentum { .. } => (vec![T::zero(); n], Vec::new()),
        };
        Self { config, second, first, shape: shape.to_vec(), step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step(&mut self, params: &mut Tensor<T>, grads: &Tensor<T>) -> Result<()> {
        if params.shape() != self.shape.as_slice() || grads.shape() != self.shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {:?}, got params {:?} grads {:?}",
                self.shape,
                params.shape(),
                grads.shape()
            )));
        }
        self.step += 1;
        let p = params.data_mut();
        let g = grads.data();
        match self.config {
            OptimizerConfig::Rmsprop { lr, rho, eps } => {
                let (lr, rho, eps) = (T::of(lr), T::of(rho), T::of(eps));
                for ((pv, &gv), v) in p.iter_mut().zip(g).zip(&mut self.second) {
                    *v = rho * *v + (T::one() - rho) * gv * gv;
                    *pv -= lr * gv / (v.sqrt() + eps);
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = T::of(1.0 - beta1.powi(t));
                let c2 = T::of(1.0 - beta2.powi(t));
                let (lr, b1, b2, eps) = (T::of(lr), T::of(beta1), T::of(beta2), T::of(eps));
                for (((pv, &gv), m), v) in p.iter_mut().zip(g).zip(&mut self.first).zip(&mut self.second) {
                    *m = b1 * *m + (T::one() - b1) * gv;
                    *v = b2 * *v + (T::one() - b2) * gv * gv;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *pv -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            OptimizerConfig::SgdMomentum { lr, momentum } => {
                let (lr, mu) = (T::of(lr), T::of(momentum));
                for ((pv, &gv), u) in p.iter_mut().zip(g).zip(&mut self.first) {
                    *u = mu * *u + gv;
                    *pv -= lr * *u;
                }
            }
        }
        Ok(())
    }
}
