//! Linear soft-margin SVM trained by stochastic subgradient descent.
//!
//! Binary file layout (little-endian):
//!
//! ```text
//! "KSVM" | version: u32 | feature length: u32 | regularization: f32 | bias: f32 | weights: f32 × length
//! ```

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};

pub const SVM_MAGIC: &[u8; 4] = b"KSVM";
pub const SVM_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub weights: Vec<f32>,
    pub bias: f32,
    pub regularization: f32,
}

/// Label in {−1, +1} and raw margin `w·x + b`. A zero margin counts as +1.
pub fn svm_classify(model: &SvmModel, features: &[f32]) -> Result<(i8, f32)> {
    if features.len() != model.weights.len() {
        bail!(
            Shape,
            "model expects {} features, got {}",
            model.weights.len(),
            features.len()
        );
    }
    let margin = model
        .weights
        .iter()
        .zip(features)
        .map(|(w, x)| (*w as f64) * (*x as f64))
        .sum::<f64>()
        + model.bias as f64;
    let margin = margin as f32;
    Ok((if margin >= 0.0 { 1 } else { -1 }, margin))
}

/// Minimizes `λ/2·(‖w‖² + b²) + mean hinge loss` with Pegasos steps
/// `η_t = 1/(λ t)` over `epochs` seeded passes, returning the average of
/// the iterates from the second half of training. The bias is treated as
/// the weight of a constant feature.
pub fn train_svm(features: &[Vec<f32>], labels: &[i8], regularization: f64, epochs: usize, seed: u64) -> Result<SvmModel> {
    if features.len() != labels.len() || features.is_empty() {
        bail!(InvalidArgument, "need equal, non-zero numbers of feature vectors and labels");
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        bail!(InvalidArgument, "labels must be -1 or +1");
    }
    if !labels.contains(&1) || !labels.contains(&-1) {
        bail!(InvalidArgument, "SVM training needs samples of both classes");
    }
    if !(regularization > 0.0) || epochs == 0 {
        bail!(InvalidArgument, "regularization must be positive and epochs >= 1");
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        bail!(Shape, "feature vectors differ in length");
    }

    let lambda = regularization;
    let n = features.len();
    let total = epochs * n;
    let avg_from = total / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // w is kept as scale · v so the shrink step is O(1).
    let mut v = vec![0.0f64; d + 1];
    let mut scale = 1.0f64;
    let mut avg = vec![0.0f64; d + 1];
    let mut averaged = 0usize;
    for t in 1..=total {
        let i = rng.gen_range(0..n);
        let x = &features[i];
        let y = labels[i] as f64;
        let margin = scale * (v[..d].iter().zip(x).map(|(a, b)| a * *b as f64).sum::<f64>() + v[d]);
        let eta = 1.0 / (lambda * t as f64);
        let shrink = 1.0 - eta * lambda;
        if shrink > 0.0 {
            scale *= shrink;
        } else {
            // t = 1: the regularizer wipes the iterate.
            v.iter_mut().for_each(|a| *a = 0.0);
            scale = 1.0;
        }
        if y * margin < 1.0 {
            let step = eta * y / scale;
            for (a, b) in v[..d].iter_mut().zip(x) {
                *a += step * *b as f64;
            }
            v[d] += step;
        }
        if scale < 1e-9 {
            v.iter_mut().for_each(|a| *a *= scale);
            scale = 1.0;
        }
        if t > avg_from {
            for (a, b) in avg.iter_mut().zip(&v) {
                *a += scale * b;
            }
            averaged += 1;
        }
    }
    let k = averaged.max(1) as f64;
    Ok(SvmModel {
        weights: avg[..d].iter().map(|a| (a / k) as f32).collect(),
        bias: (avg[d] / k) as f32,
        regularization: regularization as f32,
    })
}

impl SvmModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.weights.len());
        out.extend_from_slice(SVM_MAGIC);
        out.extend_from_slice(&SVM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.regularization.to_le_bytes());
        out.extend_from_slice(&self.bias.to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            bail!(Format, "svm file truncated (header)");
        }
        if &bytes[..4] != SVM_MAGIC {
            bail!(Format, "bad svm file magic");
        }
        let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
        let version = u32::from_le_bytes(word(4));
        if version != SVM_VERSION {
            bail!(Format, "unsupported svm file version {version}");
        }
        let len = u32::from_le_bytes(word(8)) as usize;
        if bytes.len() != 20 + 4 * len {
            bail!(Format, "svm file holds {} bytes, header implies {}", bytes.len(), 20 + 4 * len);
        }
        Ok(Self {
            regularization: f32::from_le_bytes(word(12)),
            bias: f32::from_le_bytes(word(16)),
            weights: (0..len).map(|i| f32::from_le_bytes(word(20 + 4 * i))).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
