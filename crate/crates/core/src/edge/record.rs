use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Label sentinel for unlabeled inference-time samples.
pub const UNLABELED: u16 = 0xFFFF;

pub const MAX_DIMS: usize = 4;

/// One encoded sample: the only thing a device puts on the wire.
///
/// There is deliberately no field that can hold a raw input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub device_id: u32,
    pub record_id: u64,
    pub label: u16,
    pub shape: Vec<u32>,
    /// Row-major latent values.
    pub payload: Vec<f32>,
}

impl LatentRecord {
    pub fn new(device_id: u32, record_id: u64, label: u16, shape: Vec<u32>, payload: Vec<f32>) -> Result<Self> {
        let record = Self { device_id, record_id, label, shape, payload };
        record.validate()?;
        Ok(record)
    }

    pub fn from_tensor(device_id: u32, record_id: u64, label: u16, latent: &Tensor) -> Result<Self> {
        let shape = latent
            .shape()
            .iter()
            .map(|&d| u32::try_from(d).map_err(|_| Error::ShapeMismatch(format!("dimension {d} exceeds u32"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(device_id, record_id, label, shape, latent.data().to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.is_empty() || self.shape.len() > MAX_DIMS || self.shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!("latent shape {:?} must have 1..=4 positive dims", self.shape)));
        }
        let n: u64 = self.shape.iter().map(|&d| d as u64).product();
        if n != self.payload.len() as u64 {
            return Err(Error::ShapeMismatch(format!(
                "latent shape {:?} needs {n} values, payload has {}",
                self.shape,
                self.payload.len()
            )));
        }
        Ok(())
    }

    pub fn shape_usize(&self) -> Vec<usize> {
        self.shape.iter().map(|&d| d as usize).collect()
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape_usize(), self.payload.clone())
    }

    pub fn label_index(&self) -> Option<usize> {
        (self.label != UNLABELED).then_some(self.label as usize)
    }

    pub fn payload_bytes(&self) -> usize {
        self.payload.len() * std::mem::size_of::<f32>()
    }
}
