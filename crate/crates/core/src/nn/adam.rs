use crate::error::{bail, Result};
use crate::nn::{Param, Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Per-weight Adam moments.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real> {
    pub step: u64,
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            step: 0,
            first_moment: Tensor::zeros(shape),
            second_moment: Tensor::zeros(shape),
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }
}

fn check<T: Real>(weights: &Tensor<T>, grads: &Tensor<T>, state: &AdamState<T>) -> Result<()> {
    if weights.shape() != grads.shape()
        || weights.shape() != state.first_moment.shape()
        || weights.shape() != state.second_moment.shape()
    {
        bail!(
            Shape,
            "adam: weights {:?}, grads {:?}, moments {:?}",
            weights.shape(),
            grads.shape(),
            state.first_moment.shape()
        );
    }
    if let Some(i) = grads.data().iter().position(|g| !g.is_finite()) {
        bail!(NonFinite, "gradient element {i} is {}", grads.data()[i]);
    }
    Ok(())
}

fn apply<T: Real>(weights: &mut Tensor<T>, grads: &Tensor<T>, state: &mut AdamState<T>, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let step = T::of(lr * (1.0 - state.beta2.powi(t)).sqrt() / (1.0 - state.beta1.powi(t)));
    let eps_hat = T::of(state.epsilon * (1.0 - state.beta2.powi(t)).sqrt());
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (((w, &g), m), v) in weights.data_mut().iter_mut().zip(grads.data()).zip(m).zip(v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        *w = *w - step * *m / (v.sqrt() + eps_hat);
    }
}

/// One bias-corrected Adam update of `weights` in place.
pub fn adam_step<T: Real>(
    weights: &mut Tensor<T>,
    grads: &Tensor<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    check(weights, grads, state)?;
    apply(weights, grads, state, lr);
    Ok(())
}

/// Adam over a fixed, ordered list of parameters.
#[derive(Clone, Debug, Default)]
pub struct Adam<T: Real> {
    states: Vec<AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Self { states: Vec::new() }
    }

    /// Updates every parameter from its gradient. Either all parameters move
    /// or, on a non-finite gradient, none do.
    pub fn step(&mut self, mut params: Vec<&mut Param<T>>, lr: f64) -> Result<()> {
        if self.states.is_empty() {
            self.states = params.iter().map(|p| AdamState::new(p.value.shape())).collect();
        }
        if self.states.len() != params.len() {
            bail!(Shape, "optimizer tracks {} parameters, got {}", self.states.len(), params.len());
        }
        for (p, s) in params.iter().zip(&self.states) {
            check(&p.value, &p.grad, s)?;
        }
        for (p, s) in params.iter_mut().zip(&mut self.states) {
            apply(&mut p.value, &p.grad, s, lr);
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step)
    }
}
