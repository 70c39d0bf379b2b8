use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Random horizontal flip followed by a zero-padded translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub flip_probability: f64,
    /// Maximum shift as a fraction of each spatial dimension.
    pub max_shift: f64,
}

impl AugmentPolicy {
    pub const DISABLED: Self = Self { enabled: false, flip_probability: 0.5, max_shift: 0.1 };

    pub fn standard() -> Self {
        Self { enabled: true, ..Self::DISABLED }
    }

    /// Largest shift in pixels along an axis of `extent`.
    pub fn shift_bound(&self, extent: usize) -> usize {
        (self.max_shift * extent as f64).floor() as usize
    }
}

pub fn flip_horizontal(image: &Tensor) -> Result<Tensor> {
    let (h, w, c) = image.hwc()?;
    let x = image.data();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..h {
        for j in (0..w).rev() {
            out.extend_from_slice(&x[(i * w + j) * c..][..c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Translate by `(dy, dx)` pixels; uncovered pixels become zero.
pub fn shift(image: &Tensor, dy: isize, dx: isize) -> Result<Tensor> {
    let (h, w, c) = image.hwc()?;
    let x = image.data();
    let mut out = vec![0.0; x.len()];
    for i in 0..h {
        let Some(si) = i.checked_add_signed(-dy).filter(|&s| s < h) else { continue };
        for j in 0..w {
            let Some(sj) = j.checked_add_signed(-dx).filter(|&s| s < w) else { continue };
            out[(i * w + j) * c..][..c].copy_from_slice(&x[(si * w + sj) * c..][..c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

pub fn augment<R: Rng + ?Sized>(image: &Tensor, policy: &AugmentPolicy, rng: &mut R) -> Result<Tensor> {
    let (h, w, _) = image.hwc().map_err(|_| Error::ShapeMismatch(format!("augment needs an image, got {:?}", image.shape())))?;
    if !policy.enabled {
        return Ok(image.clone());
    }
    let flipped = if rng.random::<f64>() < policy.flip_probability { flip_horizontal(image)? } else { image.clone() };
    let (by, bx) = (policy.shift_bound(h) as i64, policy.shift_bound(w) as i64);
    let dy = rng.random_range(-by..=by) as isize;
    let dx = rng.random_range(-bx..=bx) as isize;
    if dy == 0 && dx == 0 {
        return Ok(flipped);
    }
    shift(&flipped, dy, dx)
}
