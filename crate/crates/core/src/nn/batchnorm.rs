//! Batch normalization over the last (channel) axis.

use crate::error::{bail, Result};
use crate::nn::{Mode, Param, Real, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Exponential moving averages of per-channel batch mean and variance.
#[derive(Clone, Debug)]
pub struct RunningStats<T: Real> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub momentum: f64,
    /// False until the first training batch (or a loaded weight file) has
    /// provided statistics.
    pub tracked: bool,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::filled(&[channels], T::one()),
            momentum: BN_MOMENTUM,
            tracked: false,
        }
    }

    fn update(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &b) in self.mean.data_mut().iter_mut().zip(mean) {
            *r = if self.tracked {
                T::of(m * r.as_f64() + (1.0 - m) * b)
            } else {
                T::of(b)
            };
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(var) {
            *r = if self.tracked {
                T::of(m * r.as_f64() + (1.0 - m) * b)
            } else {
                T::of(b)
            };
        }
        self.tracked = true;
    }
}

struct TrainOutput<T: Real> {
    y: Tensor<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

fn channels_of<T: Real>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<usize> {
    if input.rank() < 2 {
        bail!(Shape, "batch norm needs a batch tensor, got {:?}", input.shape());
    }
    let c = *input.shape().last().unwrap();
    if gamma.shape() != [c] || beta.shape() != [c] {
        bail!(
            Shape,
            "gamma/beta {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        );
    }
    Ok(c)
}

const SUM_BLOCK: usize = 64;

/// `Σ_rows f(x[row][ch], ch)` per channel.
fn channel_sums<T: Real>(x: &[T], c: usize, f: impl Fn(T, usize) -> T) -> Vec<f64> {
    let mut total = vec![0.0f64; c];
    let mut acc = vec![T::zero(); c];
    for block in x.chunks(SUM_BLOCK * c) {
        acc.fill(T::zero());
        for row in block.chunks_exact(c) {
            for ch in 0..c {
                acc[ch] = acc[ch] + f(row[ch], ch);
            }
        }
        for (t, a) in total.iter_mut().zip(&acc) {
            *t += a.as_f64();
        }
    }
    total
}

fn normalize_train<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
) -> Result<TrainOutput<T>> {
    let c = channels_of(input, gamma, beta)?;
    let rows = input.len() / c;
    let x = input.data();

    // Per-channel sums run in T over short blocks of rows and are folded
    // into f64 between blocks, which keeps f32 batches accurate.
    let mean = channel_sums(x, c, |v, _| v)
        .into_iter()
        .map(|s| s / rows as f64)
        .collect::<Vec<_>>();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
    let var = channel_sums(x, c, |v, ch| {
        let d = v - mean_t[ch];
        d * d
    })
    .into_iter()
    .map(|s| s / rows as f64)
    .collect::<Vec<_>>();

    let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + BN_EPSILON).sqrt())).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    let (g, b) = (gamma.data(), beta.data());
    for ((row, hr), yr) in x
        .chunks_exact(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(y.chunks_exact_mut(c))
    {
        for ch in 0..c {
            let h = (row[ch] - mean_t[ch]) * inv_std[ch];
            hr[ch] = h;
            yr[ch] = g[ch] * h + b[ch];
        }
    }
    stats.update(&mean, &var);
    Ok(TrainOutput {
        y: Tensor::new(input.shape().to_vec(), y)?,
        xhat,
        inv_std,
    })
}

fn normalize_infer<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
) -> Result<Tensor<T>> {
    let c = channels_of(input, gamma, beta)?;
    if !stats.tracked {
        bail!(State, "batch norm inference requested before any training statistics exist");
    }
    // Fold into a per-channel affine map.
    let scale: Vec<T> = (0..c)
        .map(|ch| {
            gamma.data()[ch] * T::of(1.0 / (stats.var.data()[ch].as_f64() + BN_EPSILON).sqrt())
        })
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ch| beta.data()[ch] - stats.mean.data()[ch] * scale[ch])
        .collect();
    let mut y = input.data().to_vec();
    for row in y.chunks_exact_mut(c) {
        for ch in 0..c {
            row[ch] = row[ch] * scale[ch] + shift[ch];
        }
    }
    Tensor::new(input.shape().to_vec(), y)
}

/// Normalizes `input` per channel (last axis). Training mode uses batch
/// statistics and folds them into `stats`; inference mode uses `stats` only.
pub fn batchnorm_apply<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    match mode {
        Mode::Train => normalize_train(input, gamma, beta, stats).map(|o| o.y),
        Mode::Infer => normalize_infer(input, gamma, beta, stats),
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm<T: Real> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub stats: RunningStats<T>,
    cache: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(Tensor::filled(&[channels], T::one())),
            beta: Param::zeros(&[channels]),
            stats: RunningStats::new(channels),
            cache: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.last() != Some(&self.channels) {
            bail!(Shape, "batch norm over {} channels got {input:?}", self.channels);
        }
        Ok(input.to_vec())
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        normalize_infer(x, &self.gamma.value, &self.beta.value, &self.stats)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = normalize_train(x, &self.gamma.value, &self.beta.value, &mut self.stats)?;
        self.cache = Some((out.xhat, out.inv_std));
        Ok(out.y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some((xhat, inv_std)) = self.cache.take() else {
            bail!(State, "batch norm backward called without a cached forward pass");
        };
        let c = self.channels;
        if grad_out.len() != xhat.len() {
            bail!(Shape, "batch norm backward: gradient {:?} does not match input", grad_out.shape());
        }
        let rows = xhat.len() / c;
        let dy = grad_out.data();

        let sum_dy = channel_sums(dy, c, |g, _| g);
        let mut sum_dy_xhat = vec![0.0f64; c];
        let mut acc = vec![T::zero(); c];
        for (gb, hb) in dy.chunks(SUM_BLOCK * c).zip(xhat.chunks(SUM_BLOCK * c)) {
            acc.fill(T::zero());
            for (g, h) in gb.chunks_exact(c).zip(hb.chunks_exact(c)) {
                for ch in 0..c {
                    acc[ch] = acc[ch] + g[ch] * h[ch];
                }
            }
            for (t, a) in sum_dy_xhat.iter_mut().zip(&acc) {
                *t += a.as_f64();
            }
        }
        for ch in 0..c {
            self.gamma.grad.data_mut()[ch] = T::of(sum_dy_xhat[ch]);
            self.beta.grad.data_mut()[ch] = T::of(sum_dy[ch]);
        }

        // dx = gamma·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
        let m = rows as f64;
        let coef: Vec<T> = (0..c)
            .map(|ch| T::of(self.gamma.value.data()[ch].as_f64() * inv_std[ch].as_f64() / m))
            .collect();
        let sums_dy: Vec<T> = sum_dy.iter().map(|&s| T::of(s)).collect();
        let sums_dyx: Vec<T> = sum_dy_xhat.iter().map(|&s| T::of(s)).collect();
        let mm = T::of(m);
        let mut dx = vec![T::zero(); dy.len()];
        for ((g, h), d) in dy
            .chunks_exact(c)
            .zip(xhat.chunks_exact(c))
            .zip(dx.chunks_exact_mut(c))
        {
            for ch in 0..c {
                d[ch] = coef[ch] * (mm * g[ch] - sums_dy[ch] - h[ch] * sums_dyx[ch]);
            }
        }
        Tensor::new(grad_out.shape().to_vec(), dx)
    }
}
