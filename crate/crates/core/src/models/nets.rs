use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::models::arch::{classifier_network, regressor_network};
use crate::nn::{load_weights, save_weights, Layer, Network, Tensor};
use crate::{PATCH_SHAPE, PATCH_SIDE};

fn seeded<F>(build: F, seed: u64) -> Network<f32>
where
    F: FnOnce() -> Result<Network<f32>>,
{
    let mut net = build().expect("fixed architecture is valid");
    net.initialize(&mut ChaCha8Rng::seed_from_u64(seed))
        .expect("fixed architecture initializes");
    net
}

fn as_batch(patches: &Tensor<f32>) -> Result<Tensor<f32>> {
    if patches.shape() == PATCH_SHAPE {
        let mut shape = vec![1];
        shape.extend_from_slice(&PATCH_SHAPE);
        return patches.clone().reshape(&shape);
    }
    if patches.rank() != 4 || patches.shape()[1..] != PATCH_SHAPE {
        bail!(Shape, "expected 32x32x3 patches, got {:?}", patches.shape());
    }
    Ok(patches.clone())
}

/// Kernel / non-kernel classifier producing a confidence in (0, 1).
#[derive(Clone, Debug)]
pub struct ClassifierNet {
    net: Network<f32>,
}

pub fn build_classifier(seed: u64) -> ClassifierNet {
    ClassifierNet {
        net: seeded(classifier_network, seed),
    }
}

impl ClassifierNet {
    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut net = classifier_network()?;
        load_weights(&mut net, path)?;
        Ok(Self { net })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_weights(&self.net, path)
    }

    /// Confidences for one `[32, 32, 3]` patch or an `[N, 32, 32, 3]` batch.
    pub fn confidences(&self, patches: &Tensor<f32>) -> Result<Vec<f32>> {
        Ok(open_unit(self.net.infer(&as_batch(patches)?)?.into_data()))
    }

    /// Index of the first fully connected layer; everything before it is
    /// convolution, normalization, activation or pooling.
    fn dense_start(&self) -> usize {
        self.net
            .layers()
            .iter()
            .position(|l| matches!(l, Layer::Dense(_)))
            .expect("classifier has dense layers")
    }

    /// Vertical stride of the convolutional prefix: a row offset in the input
    /// moves the feature map by offset / stride rows.
    pub fn row_stride(&self) -> usize {
        self.net.layers()[..self.dense_start()]
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => c.stride,
                Layer::Pool(p) => p.stride,
                _ => 1,
            })
            .product()
    }

    /// Confidences of the 32×32 windows starting at each row of `offsets`
    /// inside a `[H, 32, 3]` column strip.
    ///
    /// The convolutional prefix runs once over the whole strip and each
    /// window's fully connected head reads its slice of the shared feature
    /// map. Every offset must be a multiple of `row_stride()`. Results agree
    /// with `confidences` on the individually cut patches up to float
    /// summation order.
    pub fn strip_confidences(&self, strip: &Tensor<f32>, offsets: &[usize]) -> Result<Vec<f32>> {
        let [h, w, 3] = *strip.shape() else {
            bail!(Shape, "expected an Hx32x3 strip, got {:?}", strip.shape());
        };
        if w != PATCH_SIDE || h < PATCH_SIDE {
            bail!(Shape, "strip must be 32 wide and at least 32 tall, got {h}x{w}");
        }
        if offsets.is_empty() {
            return Ok(Vec::new());
        }
        let stride = self.row_stride();
        for &o in offsets {
            if o % stride != 0 || o + PATCH_SIDE > h {
                bail!(InvalidArgument, "strip offset {o} is not a valid window row");
            }
        }
        let split = self.dense_start();
        let item_shape = self.net.shape_trace()?[split - 1].clone();
        let [fh, fw, fc] = item_shape[..] else {
            bail!(Shape, "unexpected feature shape {item_shape:?}");
        };
        let x = strip.clone().reshape(&[1, h, w, 3])?;
        let features = self.net.infer_layers(&x, 0..split)?;
        let full_h = features.shape()[1];
        let row_len = fw * fc;
        let item_len = fh * row_len;
        let mut gathered = Vec::with_capacity(offsets.len() * item_len);
        for &o in offsets {
            let r = o / stride;
            if r + fh > full_h {
                bail!(Shape, "strip too short for offset {o}");
            }
            gathered.extend_from_slice(&features.data()[r * row_len..r * row_len + item_len]);
        }
        let mut shape = vec![offsets.len()];
        shape.extend_from_slice(&item_shape);
        let head = Tensor::new(shape, gathered)?;
        Ok(open_unit(self.net.infer_layers(&head, split..self.net.layers().len())?.into_data()))
    }
}

/// Keeps saturated sigmoid outputs strictly inside (0, 1); in f32 a logit
/// above about 17 rounds to exactly 1.
fn open_unit(mut v: Vec<f32>) -> Vec<f32> {
    for c in &mut v {
        *c = c.clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0);
    }
    v
}

pub fn classify_patch(net: &ClassifierNet, patch: &Tensor<f32>) -> Result<f32> {
    if patch.shape() != PATCH_SHAPE {
        bail!(Shape, "classify_patch needs a 32x32x3 patch, got {:?}", patch.shape());
    }
    Ok(net.confidences(patch)?[0])
}

/// Kernel-center regressor: raw normalized (x, y), unclamped.
#[derive(Clone, Debug)]
pub struct RegressorNet {
    net: Network<f32>,
}

pub fn build_regressor(seed: u64) -> RegressorNet {
    RegressorNet {
        net: seeded(regressor_network, seed),
    }
}

impl RegressorNet {
    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network<f32> {
        &mut self.net
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut net = regressor_network()?;
        load_weights(&mut net, path)?;
        Ok(Self { net })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_weights(&self.net, path)
    }

    pub fn centers(&self, patches: &Tensor<f32>) -> Result<Vec<[f32; 2]>> {
        let out = self.net.infer(&as_batch(patches)?)?;
        Ok(out.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }
}

pub fn predict_center(net: &RegressorNet, patch: &Tensor<f32>) -> Result<[f32; 2]> {
    if patch.shape() != PATCH_SHAPE {
        bail!(Shape, "predict_center needs a 32x32x3 patch, got {:?}", patch.shape());
    }
    Ok(net.centers(patch)?[0])
}

/// Untrained classifier with random batch-norm statistics, usable for
/// inference in tests.
#[cfg(test)]
pub(crate) fn with_stats(mut c: ClassifierNet) -> ClassifierNet {
    use crate::nn::Layer;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    for l in c.network_mut().layers_mut() {
        if let Layer::BatchNorm(bn) = l {
            for v in bn.stats.mean.data_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
            for v in bn.stats.var.data_mut() {
                *v = rng.gen_range(0.05..0.5);
            }
            bn.stats.tracked = true;
        }
    }
    c
}
