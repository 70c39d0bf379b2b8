use super::layers::softmax_rows;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Scalar loss and its gradient with respect to the prediction.
#[derive(Debug, Clone)]
pub struct LossResult<T: Scalar> {
    pub value: T,
    pub gradient: Tensor<T>,
}

pub fn mse_loss<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<LossResult<T>> {
    prediction.expect_same_shape(target)?;
    let n = T::of(prediction.len() as f64);
    let two = T::of(2.0);
    let mut value = T::zero();
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            value += d * d;
            two * d / n
        })
        .collect();
    Ok(LossResult { value: value / n, gradient: Tensor::new(prediction.shape().to_vec(), grad)? })
}

/// Mean categorical cross-entropy of softmax(logits) over a BxK batch
/// (a rank-one tensor is treated as a single row).
pub fn cross_entropy_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<LossResult<T>> {
    let k = *logits.shape().last().expect("rank >= 1");
    let batch = logits.len() / k;
    if labels.len() != batch {
        return Err(Error::ShapeMismatch(format!("{batch} logit rows but {} labels", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut probs = logits.data().to_vec();
    softmax_rows(&mut probs, k);
    let b = T::of(batch as f64);
    let mut value = T::zero();
    for (row, &label) in labels.iter().enumerate() {
        // log-softmax computed from logits directly to stay finite for saturated rows
        let r = &logits.data()[row * k..(row + 1) * k];
        let max = r.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + r.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        value += lse - r[label];
        let p = &mut probs[row * k..(row + 1) * k];
        p[label] -= T::one();
        for v in p.iter_mut() {
            *v = *v / b;
        }
    }
    Ok(LossResult { value: value / b, gradient: Tensor::new(logits.shape().to_vec(), probs)? })
}
