use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatchSample;
use crate::PATCH_SIDE;

pub const JITTER_RANGE: (f32, f32) = (0.8, 1.2);
/// Share of training samples that receive one augmented copy.
pub const AUGMENT_FRACTION: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentOp {
    FlipH,
    FlipV,
    ColorJitter,
}

pub fn flip_h(sample: &PatchSample) -> PatchSample {
    let mut out = sample.clone();
    let s = PATCH_SIDE;
    let (src, dst) = (sample.patch.data(), out.patch.data_mut());
    for y in 0..s {
        for x in 0..s {
            let d = (y * s + x) * 3;
            let o = (y * s + s - 1 - x) * 3;
            dst[d..d + 3].copy_from_slice(&src[o..o + 3]);
        }
    }
    out.center = sample.center.map(|[x, y]| [s as f32 - x, y]);
    out
}

pub fn flip_v(sample: &PatchSample) -> PatchSample {
    let mut out = sample.clone();
    let s = PATCH_SIDE;
    let row = s * 3;
    let (src, dst) = (sample.patch.data(), out.patch.data_mut());
    for y in 0..s {
        dst[y * row..(y + 1) * row].copy_from_slice(&src[(s - 1 - y) * row..(s - y) * row]);
    }
    out.center = sample.center.map(|[x, y]| [x, s as f32 - y]);
    out
}

/// Scales each channel by its factor and clamps to [0, 1].
pub fn scale_channels(sample: &PatchSample, factors: [f32; 3]) -> PatchSample {
    let mut out = sample.clone();
    for px in out.patch.data_mut().chunks_exact_mut(3) {
        for (v, f) in px.iter_mut().zip(factors) {
            *v = (*v * f).clamp(0.0, 1.0);
        }
    }
    out
}

/// Applies `ops` in order. Jitter factors are drawn from `seed`.
pub fn augment(sample: &PatchSample, ops: &[AugmentOp], seed: u64) -> PatchSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sample.clone();
    for op in ops {
        out = match op {
            AugmentOp::FlipH => flip_h(&out),
            AugmentOp::FlipV => flip_v(&out),
            AugmentOp::ColorJitter => {
                let f = [0; 3].map(|_| rng.gen_range(JITTER_RANGE.0..=JITTER_RANGE.1));
                scale_channels(&out, f)
            }
        };
    }
    out
}

/// Appends one augmented copy for a uniformly chosen `AUGMENT_FRACTION` of
/// `samples` (rounded to nearest). Each copy gets a random non-empty mix of
/// flips plus color jitter.
pub fn augment_dataset(samples: &[PatchSample], seed: u64) -> Vec<PatchSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (samples.len() as f64 * AUGMENT_FRACTION).round() as usize;
    let picked = rand::seq::index::sample(&mut rng, samples.len(), n);
    let mut picked = picked.into_vec();
    picked.sort_unstable();
    let mut out = samples.to_vec();
    out.reserve(n);
    for i in picked {
        let mut ops = match rng.gen_range(0..3) {
            0 => vec![AugmentOp::FlipH],
            1 => vec![AugmentOp::FlipV],
            _ => vec![AugmentOp::FlipH, AugmentOp::FlipV],
        };
        ops.push(AugmentOp::ColorJitter);
        out.push(augment(&samples[i], &ops, rng.gen()));
    }
    out
}
