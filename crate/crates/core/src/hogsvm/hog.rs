//! Histogram-of-oriented-gradients descriptor.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::Tensor;

/// Guard added under the square root of every block norm.
pub const BLOCK_EPSILON: f32 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogConfig {
    pub cell_size: usize,
    pub cells_per_block: usize,
    pub bins: usize,
    /// Orientations over 0–360° instead of 0–180°.
    pub signed: bool,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            cell_size: 4,
            cells_per_block: 2,
            bins: 9,
            signed: false,
        }
    }
}

impl HogConfig {
    fn validate(&self, width: usize, height: usize) -> Result<(usize, usize)> {
        if self.bins < 2 || self.cell_size == 0 || self.cells_per_block == 0 {
            bail!(InvalidArgument, "HOG needs >= 2 bins and non-zero cell and block sizes");
        }
        if !width.is_multiple_of(self.cell_size) || !height.is_multiple_of(self.cell_size) {
            bail!(
                InvalidArgument,
                "{width}x{height} patch is not divisible into {}-pixel cells",
                self.cell_size
            );
        }
        let (cx, cy) = (width / self.cell_size, height / self.cell_size);
        if cx < self.cells_per_block || cy < self.cells_per_block {
            bail!(InvalidArgument, "patch holds fewer cells than one block");
        }
        Ok((cx, cy))
    }

    /// Descriptor length for a `width × height` patch.
    pub fn feature_len(&self, width: usize, height: usize) -> Result<usize> {
        let (cx, cy) = self.validate(width, height)?;
        let b = self.cells_per_block;
        Ok((cx - b + 1) * (cy - b + 1) * b * b * self.bins)
    }
}

/// Single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Luma (0.299, 0.587, 0.114) of an `[H, W, 3]` tensor.
pub fn grayscale(patch: &Tensor<f32>) -> Result<GrayImage> {
    let [h, w, 3] = *patch.shape() else {
        bail!(Shape, "expected an HxWx3 patch, got {:?}", patch.shape());
    };
    let data = patch
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    Ok(GrayImage { width: w, height: h, data })
}

/// Per-cell histograms (`[cells_y][cells_x][bins]`, flattened) with linear
/// interpolation between the two nearest orientation bins.
fn cell_histograms(img: &GrayImage, cfg: &HogConfig, cells_x: usize, cells_y: usize) -> Vec<f32> {
    let (w, h) = (img.width, img.height);
    let at = |x: usize, y: usize| img.data[y * w + x];
    let span = if cfg.signed { 360.0 } else { 180.0 };
    let bin_width = span / cfg.bins as f32;
    let mut hist = vec![0.0f32; cells_x * cells_y * cfg.bins];
    for y in 0..h {
        for x in 0..w {
            // Centered differences with replicated borders.
            let gx = at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y);
            let gy = at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 360.0;
            }
            if !cfg.signed && angle >= 180.0 {
                angle -= 180.0;
            }
            // Bin i is centered at i · bin_width; votes wrap around.
            let pos = angle / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as usize) % cfg.bins;
            let b1 = (b0 + 1) % cfg.bins;
            let cell = ((y / cfg.cell_size) * cells_x + x / cfg.cell_size) * cfg.bins;
            hist[cell + b0] += mag * (1.0 - frac);
            hist[cell + b1] += mag * frac;
        }
    }
    hist
}

/// HOG descriptor: cell histograms grouped into overlapping blocks (stride
/// one cell), each block L2-normalized with an epsilon guard, concatenated
/// in row-major block order.
pub fn hog_features(img: &GrayImage, cfg: &HogConfig) -> Result<Vec<f32>> {
    if img.data.len() != img.width * img.height {
        bail!(Shape, "gray image buffer does not match {}x{}", img.width, img.height);
    }
    let (cells_x, cells_y) = cfg.validate(img.width, img.height)?;
    let hist = cell_histograms(img, cfg, cells_x, cells_y);
    let b = cfg.cells_per_block;
    let mut out = Vec::with_capacity(cfg.feature_len(img.width, img.height)?);
    for by in 0..=cells_y - b {
        for bx in 0..=cells_x - b {
            let start = out.len();
            for cy in by..by + b {
                for cx in bx..bx + b {
                    let c = (cy * cells_x + cx) * cfg.bins;
                    out.extend_from_slice(&hist[c..c + cfg.bins]);
                }
            }
            let block = &mut out[start..];
            let norm = (block.iter().map(|v| v * v).sum::<f32>() + BLOCK_EPSILON * BLOCK_EPSILON).sqrt();
            block.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(out)
}

/// HOG of an RGB `[H, W, 3]` patch via its luma.
pub fn patch_features(patch: &Tensor<f32>, cfg: &HogConfig) -> Result<Vec<f32>> {
    hog_features(&grayscale(patch)?, cfg)
}
