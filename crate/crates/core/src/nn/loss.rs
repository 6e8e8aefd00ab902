use crate::error::{bail, Result};
use crate::nn::{Real, Tensor};

/// Probability clamp that keeps the log loss finite.
pub const BCE_CLAMP: f64 = 1e-7;

/// A scalar loss and its gradient with respect to the predictions.
#[derive(Clone, Debug)]
pub struct LossValue<T: Real> {
    pub value: f64,
    pub gradient: Tensor<T>,
}

/// Mean binary cross-entropy of probabilities against 0/1 targets.
///
/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`; the gradient is
/// the derivative of the loss evaluated at the clamped probability.
pub fn bce_loss<T: Real>(predictions: &Tensor<T>, targets: &[T]) -> Result<LossValue<T>> {
    if predictions.len() != targets.len() {
        bail!(Shape, "{} predictions for {} targets", predictions.len(), targets.len());
    }
    if let Some(t) = targets.iter().find(|&&t| t != T::zero() && t != T::one()) {
        bail!(InvalidArgument, "binary targets must be 0 or 1, got {t}");
    }
    let n = targets.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(targets.len());
    for (&p, &y) in predictions.data().iter().zip(targets) {
        let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let y = y.as_f64();
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push(T::of((p - y) / (p * (1.0 - p)) / n));
    }
    Ok(LossValue {
        value: total / n,
        gradient: Tensor::new(predictions.shape().to_vec(), grad)?,
    })
}

/// Mean elementwise smooth L1 (Huber with unit threshold).
pub fn smooth_l1_loss<T: Real>(predictions: &Tensor<T>, targets: &Tensor<T>) -> Result<LossValue<T>> {
    if predictions.shape() != targets.shape() {
        bail!(
            Shape,
            "smooth L1: predictions {:?} vs targets {:?}",
            predictions.shape(),
            targets.shape()
        );
    }
    let n = predictions.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &t) in predictions.data().iter().zip(targets.data()) {
        let d = p.as_f64() - t.as_f64();
        if d.abs() < 1.0 {
            total += 0.5 * d * d;
        } else {
            total += d.abs() - 0.5;
        }
        grad.push(T::of(d.clamp(-1.0, 1.0) / n));
    }
    Ok(LossValue {
        value: total / n,
        gradient: Tensor::new(predictions.shape().to_vec(), grad)?,
    })
}
