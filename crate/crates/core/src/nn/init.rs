use rand::Rng;

use super::tensor::{Scalar, Tensor};

/// Fan-in and fan-out for a parameter shape: KxKxCxF convolution kernels or NxM dense weights.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [k1, k2, c, f] => (k1 * k2 * c, k1 * k2 * f),
        [n, m] => (*n, *m),
        [n] => (*n, *n),
        _ => {
            let receptive: usize = shape[..shape.len() - 2].iter().product();
            (receptive * shape[shape.len() - 2], receptive * shape[shape.len() - 1])
        }
    }
}

pub fn glorot_limit(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = fans(shape);
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Glorot-uniform initialization: i.i.d. samples on `[-L, L]`, `L = sqrt(6/(fan_in+fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    assert!(!shape.is_empty(), "glorot init needs a nonempty shape");
    let limit = glorot_limit(shape);
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-limit..=limit)))
}
