//! Valid (unpadded) 2-D convolution over NHWC tensors, lowered to GEMM via
//! im2col.

use crate::error::{bail, Result};
use crate::nn::{Param, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(h: usize, w: usize, c: usize, k: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            bail!(InvalidArgument, "convolution stride must be >= 1");
        }
        if k == 0 || h < k || w < k {
            bail!(Shape, "{k}x{k} filter does not fit a {h}x{w} input");
        }
        Ok(Self {
            h,
            w,
            c,
            k,
            stride,
            oh: (h - k) / stride + 1,
            ow: (w - k) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.k * self.k * self.c
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (k, c, s) = (self.k, self.c, self.stride);
        let row_len = self.patch_len();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * row_len..][..row_len];
                for ky in 0..k {
                    let src = ((oy * s + ky) * self.w + ox * s) * c;
                    row[ky * k * c..(ky + 1) * k * c].copy_from_slice(&x[src..src + k * c]);
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (k, c, s) = (self.k, self.c, self.stride);
        let row_len = self.patch_len();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * row_len..][..row_len];
                for ky in 0..k {
                    let dst = ((oy * s + ky) * self.w + ox * s) * c;
                    for (d, &v) in dx[dst..dst + k * c]
                        .iter_mut()
                        .zip(&row[ky * k * c..(ky + 1) * k * c])
                    {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Splits an `[H, W, C]` or `[N, H, W, C]` shape into `(n, h, w, c)`.
fn nhwc(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c)),
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => bail!(Shape, "expected an HxWxC or NxHxWxC tensor, got {shape:?}"),
    }
}

fn check_filters<T: Real>(filters: &Tensor<T>, bias: &Tensor<T>, channels: usize) -> Result<usize> {
    let (k, cin, cout) = match *filters.shape() {
        [kh, kw, cin, cout] if kh == kw => (kh, cin, cout),
        _ => bail!(Shape, "filters must be [k, k, C_in, C_out], got {:?}", filters.shape()),
    };
    if cin != channels {
        bail!(Shape, "filters expect {cin} input channels, input has {channels}");
    }
    if bias.shape() != [cout] {
        bail!(Shape, "bias must be [{cout}], got {:?}", bias.shape());
    }
    Ok(k)
}

/// Valid convolution of `input` (HxWxC or NxHxWxC) with `filters`
/// (`[k, k, C_in, C_out]`) plus a per-filter bias.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, h, w, c) = nhwc(input.shape())?;
    let k = check_filters(filters, bias, c)?;
    let g = Geometry::new(h, w, c, k, stride)?;
    let cout = bias.len();
    let (p, kk) = (g.positions(), g.patch_len());

    let mut out = Vec::with_capacity(n * p * cout);
    for _ in 0..n * p {
        out.extend_from_slice(bias.data());
    }
    let mut cols = vec![T::zero(); p * kk];
    let sample_len = h * w * c;
    for i in 0..n {
        g.im2col(&input.data()[i * sample_len..(i + 1) * sample_len], &mut cols);
        T::gemm(
            p,
            kk,
            cout,
            &cols,
            false,
            filters.data(),
            false,
            T::one(),
            &mut out[i * p * cout..(i + 1) * p * cout],
        );
    }
    let shape = if input.rank() == 3 {
        vec![g.oh, g.ow, cout]
    } else {
        vec![n, g.oh, g.ow, cout]
    };
    Tensor::new(shape, out)
}

/// Convolution layer. Weights are `[k, k, C_in, C_out]`, bias `[C_out]`.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Real> {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(kernel: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kernel,
            in_channels,
            out_channels,
            stride,
            weight: Param::zeros(&[kernel, kernel, in_channels, out_channels]),
            bias: Param::zeros(&[out_channels]),
            input: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (_, h, w, c) = nhwc(input)?;
        if c != self.in_channels {
            bail!(Shape, "conv expects {} channels, got {c}", self.in_channels);
        }
        let g = Geometry::new(h, w, c, self.kernel, self.stride)?;
        Ok(vec![g.oh, g.ow, self.out_channels])
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.weight.value, &self.bias.value, self.stride)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(x) = self.input.take() else {
            bail!(State, "conv backward called without a cached forward pass");
        };
        let (n, h, w, c) = nhwc(x.shape())?;
        let g = Geometry::new(h, w, c, self.kernel, self.stride)?;
        let (p, kk, f) = (g.positions(), g.patch_len(), self.out_channels);
        if grad_out.len() != n * p * f {
            bail!(Shape, "conv backward: gradient {:?} does not match output", grad_out.shape());
        }

        self.weight.grad.fill(T::zero());
        self.bias.grad.fill(T::zero());
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![T::zero(); p * kk];
        let mut dcols = vec![T::zero(); p * kk];
        let sample_len = h * w * c;
        for i in 0..n {
            let dy = &grad_out.data()[i * p * f..(i + 1) * p * f];
            g.im2col(&x.data()[i * sample_len..(i + 1) * sample_len], &mut cols);
            T::gemm(kk, p, f, &cols, true, dy, false, T::one(), self.weight.grad.data_mut());
            let db = self.bias.grad.data_mut();
            for row in dy.chunks_exact(f) {
                for (b, &v) in db.iter_mut().zip(row) {
                    *b = *b + v;
                }
            }
            T::gemm(p, f, kk, dy, false, self.weight.value.data(), true, T::zero(), &mut dcols);
            g.col2im(&dcols, &mut dx.data_mut()[i * sample_len..(i + 1) * sample_len]);
        }
        Ok(dx)
    }
}
