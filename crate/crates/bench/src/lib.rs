//! Shared fixtures for the criterion benches.

use latentwire::{LatentRecord, Tensor};

/// Deterministic pseudo-random image in [0, 1).
pub fn image(shape: &[usize], salt: u32) -> Tensor {
    Tensor::from_fn(shape, |i| {
        let x = (i as u32).wrapping_mul(2_654_435_761).wrapping_add(salt.wrapping_mul(40_503));
        (x >> 8) as f32 / (1u32 << 24) as f32
    })
}

/// A latent record with `shape` and a ramp payload.
pub fn record(shape: &[u32], record_id: u64) -> LatentRecord {
    let n: u32 = shape.iter().product();
    LatentRecord::new(1, record_id, 3, shape.to_vec(), (0..n).map(|i| i as f32 * 1e-3).collect()).expect("valid record")
}
