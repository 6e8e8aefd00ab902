use crate::error::{bail, Result};
use crate::nn::{Param, Real, Tensor};

/// Affine map `x · W + b` on a flattened input. `W` is `[inputs, outputs]`.
pub fn dense_forward<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [fan_in, fan_out] = *weights.shape() else {
        bail!(Shape, "dense weights must be rank 2, got {:?}", weights.shape());
    };
    if bias.shape() != [fan_out] {
        bail!(Shape, "dense bias must be [{fan_out}], got {:?}", bias.shape());
    }
    let (rows, batched) = match input.rank() {
        1 => (1, false),
        _ => (input.batch(), true),
    };
    if input.len() != rows * fan_in {
        bail!(Shape, "dense layer expects {fan_in} inputs per item, got shape {:?}", input.shape());
    }
    let mut out = Vec::with_capacity(rows * fan_out);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    T::gemm(rows, fan_in, fan_out, input.data(), false, weights.data(), false, T::one(), &mut out);
    let shape = if batched { vec![rows, fan_out] } else { vec![fan_out] };
    Tensor::new(shape, out)
}

#[derive(Clone, Debug)]
pub struct Dense<T: Real> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: Param::zeros(&[inputs, outputs]),
            bias: Param::zeros(&[outputs]),
            input: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let n: usize = input.iter().product();
        if n != self.inputs {
            bail!(Shape, "dense layer expects {} inputs, got {input:?}", self.inputs);
        }
        Ok(vec![self.outputs])
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense_forward(x, &self.weight.value, &self.bias.value)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(x) = self.input.take() else {
            bail!(State, "dense backward called without a cached forward pass");
        };
        let rows = x.len() / self.inputs;
        if grad_out.len() != rows * self.outputs {
            bail!(Shape, "dense backward: gradient {:?} does not match output", grad_out.shape());
        }
        let dy = grad_out.data();
        T::gemm(self.inputs, rows, self.outputs, x.data(), true, dy, false, T::zero(), self.weight.grad.data_mut());
        let db = self.bias.grad.data_mut();
        db.iter_mut().for_each(|b| *b = T::zero());
        for row in dy.chunks_exact(self.outputs) {
            for (b, &v) in db.iter_mut().zip(row) {
                *b = *b + v;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        T::gemm(rows, self.outputs, self.inputs, dy, false, self.weight.value.data(), true, T::zero(), dx.data_mut());
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattened_pooled_features_input() {
        let x = Tensor::<f32>::zeros(&[4, 2, 2, 64]);
        let y = dense_forward(&x, &Tensor::zeros(&[256, 256]), &Tensor::zeros(&[256])).unwrap();
        assert_eq!(y.shape(), &[4, 256]);
    }

    #[test]
    fn identity_weights_copy_input() {
        let x = Tensor::scalar_vec(&[1.5f64, -2.0, 0.25]);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let y = dense_forward(&x, &w, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn hand_matrix_product() {
        let x = Tensor::scalar_vec(&[1.0f64, 2.0]);
        let w = Tensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap();
        let y = dense_forward(&x, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let x = Tensor::scalar_vec(&[1.0f32, 2.0, 3.0]);
        assert!(dense_forward(&x, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).is_err());
        assert!(dense_forward(&Tensor::zeros(&[2]), &Tensor::<f32>::zeros(&[2, 2]), &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn quadratic_loss_gradient_matches_closed_form() {
        // y = w1·x1 + w2·x2 + b, L = y², so dL/dw = 2y·x and dL/db = 2y.
        let mut layer = Dense::<f64>::new(2, 1);
        layer.weight.value = Tensor::new(vec![2, 1], vec![0.5, -0.25]).unwrap();
        layer.bias.value = Tensor::scalar_vec(&[0.1]);
        let x = Tensor::new(vec![1, 2], vec![2.0, 4.0]).unwrap();
        let y = layer.forward_train(&x).unwrap().data()[0];
        assert!((y - 0.1).abs() < 1e-12);
        let dy = Tensor::new(vec![1, 1], vec![2.0 * y]).unwrap();
        let dx = layer.backward(&dy).unwrap();
        assert!((layer.weight.grad.data()[0] - 2.0 * y * 2.0).abs() < 1e-12);
        assert!((layer.weight.grad.data()[1] - 2.0 * y * 4.0).abs() < 1e-12);
        assert!((layer.bias.grad.data()[0] - 2.0 * y).abs() < 1e-12);
        assert!((dx.data()[0] - 2.0 * y * 0.5).abs() < 1e-12);
    }
}
