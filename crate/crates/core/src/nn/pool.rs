use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Avg,
    Max,
}

fn dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c)),
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => bail!(Shape, "pooling expects HxWxC or NxHxWxC, got {shape:?}"),
    }
}

fn out_dims(h: usize, w: usize, size: usize, stride: usize) -> Result<(usize, usize)> {
    if stride == 0 || size == 0 {
        bail!(InvalidArgument, "pool size and stride must be >= 1");
    }
    if size > h || size > w {
        bail!(Shape, "{size}x{size} pool window exceeds {h}x{w} input");
    }
    Ok(((h - size) / stride + 1, (w - size) / stride + 1))
}

/// Pools each channel independently. Returns the output and, for max
/// pooling, the flat input index chosen for every output value.
fn pool<T: Real>(
    input: &Tensor<T>,
    kind: PoolKind,
    size: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, h, w, c) = dims(input.shape())?;
    let (oh, ow) = out_dims(h, w, size, stride)?;
    let x = input.data();
    let area = T::of((size * size) as f64);
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::new();
    if kind == PoolKind::Max {
        argmax.reserve(n * oh * ow * c);
    }
    for i in 0..n {
        let base = i * h * w * c;
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut acc = T::zero();
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0;
                    for ky in 0..size {
                        for kx in 0..size {
                            let idx = base + ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            let v = x[idx];
                            acc = acc + v;
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    match kind {
                        PoolKind::Avg => out.push(acc / area),
                        PoolKind::Max => {
                            out.push(best);
                            argmax.push(best_idx);
                        }
                    }
                }
            }
        }
    }
    let shape = if input.rank() == 3 {
        vec![oh, ow, c]
    } else {
        vec![n, oh, ow, c]
    };
    Ok((Tensor::new(shape, out)?, argmax))
}

pub fn pool2d_forward<T: Real>(
    input: &Tensor<T>,
    kind: PoolKind,
    size: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    pool(input, kind, size, stride).map(|(y, _)| y)
}

#[derive(Clone, Debug)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub size: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl Pool2d {
    pub fn new(kind: PoolKind, size: usize, stride: usize) -> Self {
        Self {
            kind,
            size,
            stride,
            cache: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (_, h, w, c) = dims(input)?;
        let (oh, ow) = out_dims(h, w, self.size, self.stride)?;
        Ok(vec![oh, ow, c])
    }

    pub fn infer<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        pool2d_forward(x, self.kind, self.size, self.stride)
    }

    pub fn forward_train<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, argmax) = pool(x, self.kind, self.size, self.stride)?;
        self.cache = Some((x.shape().to_vec(), argmax));
        Ok(y)
    }

    pub fn backward<T: Real>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some((in_shape, argmax)) = self.cache.take() else {
            bail!(State, "pool backward called without a cached forward pass");
        };
        let (n, h, w, c) = dims(&in_shape)?;
        let (oh, ow) = out_dims(h, w, self.size, self.stride)?;
        if grad_out.len() != n * oh * ow * c {
            bail!(Shape, "pool backward: gradient {:?} does not match output", grad_out.shape());
        }
        let mut dx = Tensor::zeros(&in_shape);
        let g = grad_out.data();
        let d = dx.data_mut();
        match self.kind {
            PoolKind::Max => {
                for (&idx, &v) in argmax.iter().zip(g) {
                    d[idx] = d[idx] + v;
                }
            }
            PoolKind::Avg => {
                let area = T::of((self.size * self.size) as f64);
                let mut o = 0;
                for i in 0..n {
                    let base = i * h * w * c;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ch in 0..c {
                                let share = g[o] / area;
                                o += 1;
                                for ky in 0..self.size {
                                    for kx in 0..self.size {
                                        let idx = base
                                            + ((oy * self.stride + ky) * w + ox * self.stride + kx) * c
                                            + ch;
                                        d[idx] = d[idx] + share;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}
