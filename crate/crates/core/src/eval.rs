//! Classification and counting metrics, and detection overlays.

use serde::{Deserialize, Serialize};

use crate::data::{PatchSample, RgbImage};
use crate::detector::Detection;
use crate::error::{bail, Result};
use crate::models::{ClassifierNet, RegressorNet};
use crate::nn::Tensor;
use crate::{PATCH_SHAPE, PATCH_SIDE};

const CHUNK: usize = 256;

fn stack(samples: &[PatchSample]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(samples.len() * PATCH_SIDE * PATCH_SIDE * 3);
    for s in samples {
        data.extend_from_slice(s.patch.data());
    }
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(&PATCH_SHAPE);
    Tensor::new(shape, data)
}

/// Classifier decisions (confidence ≥ 0.5) for every sample.
pub fn classifier_predictions(net: &ClassifierNet, samples: &[PatchSample]) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        out.extend(net.confidences(&stack(chunk)?)?.into_iter().map(|c| c >= 0.5));
    }
    Ok(out)
}

/// Mean Euclidean distance in 32×32 patch pixels between predicted
/// (clamped) and true centers over the kernel samples that carry a center.
pub fn mean_center_error(net: &RegressorNet, samples: &[PatchSample]) -> Result<f64> {
    let with_center: Vec<PatchSample> = samples.iter().filter(|s| s.center.is_some()).cloned().collect();
    if with_center.is_empty() {
        bail!(InvalidArgument, "no samples with a kernel center");
    }
    let side = PATCH_SIDE as f64;
    let mut total = 0.0;
    for chunk in with_center.chunks(CHUNK) {
        for (s, [u, v]) in chunk.iter().zip(net.centers(&stack(chunk)?)?) {
            let [tx, ty] = s.center.expect("filtered");
            let dx = (u as f64).clamp(0.0, 1.0) * side - tx as f64;
            let dy = (v as f64).clamp(0.0, 1.0) * side - ty as f64;
            total += dx.hypot(dy);
        }
    }
    Ok(total / with_center.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub f_score: f64,
}

/// Confusion counts with kernel as the positive class. F-score is 0 when
/// precision and recall are both 0 (or undefined).
pub fn classification_metrics(predicted: &[bool], truth: &[bool]) -> Result<ClassificationMetrics> {
    if predicted.len() != truth.len() {
        bail!(InvalidArgument, "{} predictions for {} labels", predicted.len(), truth.len());
    }
    if predicted.is_empty() {
        bail!(InvalidArgument, "no labels to score");
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / predicted.len() as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ClassificationMetrics { tp, fp, tn, fn_, accuracy, f_score })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingMetrics {
    pub rmse: f64,
    pub mae: f64,
    /// Pearson r × 100; `None` when either sequence has zero variance or
    /// fewer than two pairs are given.
    pub correlation: Option<f64>,
}

pub fn counting_metrics(predicted: &[f64], truth: &[f64]) -> Result<CountingMetrics> {
    if predicted.len() != truth.len() {
        bail!(InvalidArgument, "{} predictions for {} counts", predicted.len(), truth.len());
    }
    if predicted.is_empty() {
        bail!(InvalidArgument, "no counts to score");
    }
    if predicted.iter().chain(truth).any(|v| !v.is_finite()) {
        bail!(NonFinite, "counts must be finite");
    }
    let n = predicted.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (p, t) in predicted.iter().zip(truth) {
        se += (p - t) * (p - t);
        ae += (p - t).abs();
    }
    Ok(CountingMetrics {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        correlation: pearson(predicted, truth).map(|r| r * 100.0),
    })
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub const DOT_RADIUS: f64 = 2.0;
pub const DOT_COLOR: [u8; 3] = [255, 0, 0];
pub const BOX_COLOR: [u8; 3] = [0, 255, 255];

/// Copy of `image` with a filled dot at every refined center (and, when
/// `boxes` is set, every window outline). Parts outside the image are
/// clipped.
pub fn render_overlay(image: &RgbImage, detections: &[Detection], boxes: bool) -> RgbImage {
    let mut out = image.clone();
    let (w, h) = (image.width(), image.height());
    if boxes {
        for d in detections {
            let win = &d.window;
            if win.width == 0 || win.height == 0 {
                continue;
            }
            let (x1, y1) = (win.right() - 1, win.bottom() - 1);
            for x in win.x..=x1 {
                for y in [win.y, y1] {
                    if x < w && y < h {
                        out.put(x, y, BOX_COLOR);
                    }
                }
            }
            for y in win.y..=y1 {
                for x in [win.x, x1] {
                    if x < w && y < h {
                        out.put(x, y, BOX_COLOR);
                    }
                }
            }
        }
    }
    for [cx, cy] in detections.iter().filter_map(|d| d.center) {
        let r = DOT_RADIUS;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x0 = (cx - r).floor().max(0.0) as usize;
        for y in y0..((cy + r).ceil().max(0.0) as usize + 1).min(h) {
            for x in x0..((cx + r).ceil().max(0.0) as usize + 1).min(w) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    out.put(x, y, DOT_COLOR);
                }
            }
        }
    }
    out
}
