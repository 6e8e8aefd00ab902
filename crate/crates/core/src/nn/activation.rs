use crate::error::{bail, Result};
use crate::nn::{Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

#[inline]
fn sigmoid_scalar<T: Real>(v: T) -> T {
    // Split by sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward_train<T: Real>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        relu(x)
    }

    pub fn backward<T: Real>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(mask) = self.mask.take() else {
            bail!(State, "relu backward called without a cached forward pass");
        };
        if mask.len() != grad_out.len() {
            bail!(Shape, "relu backward: gradient {:?} does not match input", grad_out.shape());
        }
        let data = grad_out
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &on)| if on { g } else { T::zero() })
            .collect::<Vec<_>>();
        Tensor::new(grad_out.shape().to_vec(), data)
    }
}

#[derive(Clone, Debug)]
pub struct Sigmoid<T: Real> {
    output: Option<Tensor<T>>,
}

impl<T: Real> Default for Sigmoid<T> {
    fn default() -> Self {
        Self { output: None }
    }
}

impl<T: Real> Sigmoid<T> {
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = sigmoid(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(y) = self.output.take() else {
            bail!(State, "sigmoid backward called without a cached forward pass");
        };
        if y.len() != grad_out.len() {
            bail!(Shape, "sigmoid backward: gradient {:?} does not match output", grad_out.shape());
        }
        let data = grad_out
            .data()
            .iter()
            .zip(y.data())
            .map(|(&g, &s)| g * s * (T::one() - s))
            .collect();
        Tensor::new(grad_out.shape().to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_and_bounded() {
        let x = Tensor::scalar_vec(&[-1000.0f64, -20.0, 0.0, 20.0, 1000.0]);
        let y = sigmoid(&x);
        assert!(y.all_finite());
        assert_eq!(y.data()[2], 0.5);
        assert!(y.data()[1] > 0.0 && y.data()[3] < 1.0);
    }

    #[test]
    fn relu_zeroes_negatives() {
        let x = Tensor::scalar_vec(&[-1.0f32, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }
}
