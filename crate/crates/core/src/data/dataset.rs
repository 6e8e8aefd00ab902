//! Labeled patch corpora cut from synthetic ears.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{
    extract_patch, tensor_to_image, to_patch_coords, write_image, Label, Manifest, ManifestRecord, PatchSample,
    SyntheticEarTruth,
};
use crate::detector::{iou, Window};
use crate::error::{bail, Result};
use crate::nn::Tensor;

pub const CROP_WIDTH: usize = 22;
pub const CROP_HEIGHT: usize = 32;
/// Largest displacement of a positive crop from its kernel center, pixels.
pub const MAX_POSITIVE_OFFSET: f64 = 4.0;
/// Negatives must overlap every kernel box by less than this IoU, unless
/// they contain two or more centers.
pub const NEGATIVE_MAX_IOU: f64 = 0.2;
/// Kernel-to-background ratio of the reference corpus (6,978 : 9,413).
pub const NEGATIVES_PER_POSITIVE: f64 = 9_413.0 / 6_978.0;

/// One planned crop: source image index, window and annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub image: usize,
    pub window: Window,
    pub label: Label,
    /// Kernel center in image pixels.
    pub center: Option<[f64; 2]>,
}

fn window_at(cx: f64, cy: f64) -> Option<Window> {
    let x = (cx - CROP_WIDTH as f64 / 2.0).round();
    let y = (cy - CROP_HEIGHT as f64 / 2.0).round();
    (x >= 0.0 && y >= 0.0).then(|| Window::new(x as usize, y as usize, CROP_WIDTH, CROP_HEIGHT))
}

fn centers_inside(w: &Window, centers: &[[f64; 2]]) -> usize {
    centers.iter().filter(|c| w.contains(c[0], c[1])).count()
}

/// Window-sized box centered on each kernel.
fn kernel_boxes(centers: &[[f64; 2]]) -> Vec<Window> {
    centers
        .iter()
        .map(|c| {
            let x = (c[0] - CROP_WIDTH as f64 / 2.0).round().max(0.0) as usize;
            let y = (c[1] - CROP_HEIGHT as f64 / 2.0).round().max(0.0) as usize;
            Window::new(x, y, CROP_WIDTH, CROP_HEIGHT)
        })
        .collect()
}

/// The negative rule: low overlap with every kernel, or two or more kernels.
pub fn is_negative_crop(w: &Window, centers: &[[f64; 2]], boxes: &[Window]) -> bool {
    centers_inside(w, centers) >= 2 || boxes.iter().all(|b| iou(w, b) < NEGATIVE_MAX_IOU)
}

/// Plans one positive per kernel (shifted by up to `MAX_POSITIVE_OFFSET`,
/// containing exactly that center) and `negatives_per_image` negatives per
/// image, half of them drawn close to kernels and half anywhere.
/// Negatives to cut per image so the corpus keeps the published
/// negative:positive proportion.
pub fn negatives_per_image(truths: &[SyntheticEarTruth]) -> usize {
    if truths.is_empty() {
        return 0;
    }
    let positives: usize = truths.iter().map(|t| t.visible_count).sum();
    (positives as f64 * NEGATIVES_PER_POSITIVE / truths.len() as f64).ceil() as usize
}

pub fn plan_crops(truths: &[SyntheticEarTruth], negatives_per_image: usize, seed: u64) -> Result<Vec<Crop>> {
    if truths.is_empty() {
        bail!(InvalidArgument, "no ears to cut patches from");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crops = Vec::new();
    for (idx, t) in truths.iter().enumerate() {
        let (w, h) = (t.image.width(), t.image.height());
        if w < CROP_WIDTH || h < CROP_HEIGHT {
            bail!(InvalidArgument, "image {idx} is smaller than a crop");
        }
        for c in &t.centers {
            // Retry with shrinking offsets so edge kernels still yield a crop.
            for attempt in 0..=10 {
                let scale = MAX_POSITIVE_OFFSET * (10 - attempt) as f64 / 10.0;
                let dx = if scale > 0.0 { rng.gen_range(-scale..=scale) } else { 0.0 };
                let dy = if scale > 0.0 { rng.gen_range(-scale..=scale) } else { 0.0 };
                let Some(win) = window_at(c[0] + dx, c[1] + dy) else { continue };
                if win.fits(w, h) && win.contains(c[0], c[1]) && centers_inside(&win, &t.centers) == 1 {
                    crops.push(Crop { image: idx, window: win, label: Label::Kernel, center: Some(*c) });
                    break;
                }
            }
        }

        let boxes = kernel_boxes(&t.centers);
        let mut placed = 0;
        let mut tries = 0usize;
        while placed < negatives_per_image {
            tries += 1;
            if tries > 1000 * negatives_per_image.max(1) {
                bail!(
                    InvalidArgument,
                    "could only place {placed} of {negatives_per_image} negatives in image {idx}"
                );
            }
            // Cycle through near-kernel, decoy-centered and anywhere draws.
            let kind = tries % 3;
            let (x, y) = if kind == 0 && !t.centers.is_empty() {
                let c = t.centers[rng.gen_range(0..t.centers.len())];
                let jx = rng.gen_range(-(CROP_WIDTH as f64)..=CROP_WIDTH as f64);
                let jy = rng.gen_range(-(CROP_HEIGHT as f64)..=CROP_HEIGHT as f64);
                (c[0] + jx - CROP_WIDTH as f64 / 2.0, c[1] + jy - CROP_HEIGHT as f64 / 2.0)
            } else if kind == 1 && !t.decoys.is_empty() {
                let c = t.decoys[rng.gen_range(0..t.decoys.len())];
                let jx = rng.gen_range(-MAX_POSITIVE_OFFSET..=MAX_POSITIVE_OFFSET);
                let jy = rng.gen_range(-MAX_POSITIVE_OFFSET..=MAX_POSITIVE_OFFSET);
                (c[0] + jx - CROP_WIDTH as f64 / 2.0, c[1] + jy - CROP_HEIGHT as f64 / 2.0)
            } else {
                (
                    rng.gen_range(0..=w - CROP_WIDTH) as f64,
                    rng.gen_range(0..=h - CROP_HEIGHT) as f64,
                )
            };
            if x < 0.0 || y < 0.0 {
                continue;
            }
            let win = Window::new(x.round() as usize, y.round() as usize, CROP_WIDTH, CROP_HEIGHT);
            if win.fits(w, h) && is_negative_crop(&win, &t.centers, &boxes) {
                crops.push(Crop { image: idx, window: win, label: Label::NonKernel, center: None });
                placed += 1;
            }
        }
    }
    Ok(crops)
}

/// Rounds a [0, 1] patch to the 8-bit grid it is stored on.
fn quantize(t: &mut Tensor<f32>) {
    for v in t.data_mut() {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}

pub fn crop_to_sample(truths: &[SyntheticEarTruth], crop: &Crop) -> Result<PatchSample> {
    let mut patch = extract_patch(&truths[crop.image].image, &crop.window)?;
    quantize(&mut patch);
    let center = crop.center.map(|[x, y]| to_patch_coords(&crop.window, x, y));
    PatchSample::new(patch, crop.label, center)
}

/// In-memory patch corpus; identical to what `build_patch_dataset` writes
/// and `load_samples` reads back.
pub fn build_patch_samples(
    truths: &[SyntheticEarTruth],
    negatives_per_image: usize,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    plan_crops(truths, negatives_per_image, seed)?
        .iter()
        .map(|c| crop_to_sample(truths, c))
        .collect()
}

/// Writes every patch as `patches/<index>.png` under `out_dir` and returns
/// the manifest (also saved as `out_dir/manifest.json`).
pub fn build_patch_dataset(
    truths: &[SyntheticEarTruth],
    negatives_per_image: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("patches"))?;
    let crops = plan_crops(truths, negatives_per_image, seed)?;
    let mut samples = Vec::with_capacity(crops.len());
    for (i, crop) in crops.iter().enumerate() {
        let s = crop_to_sample(truths, crop)?;
        let rel = format!("patches/{i:06}.png");
        write_image(&tensor_to_image(&s.patch)?, out_dir.join(&rel))?;
        samples.push(ManifestRecord {
            path: rel,
            label: s.label,
            center: s.center.map(|[x, y]| [x as f64, y as f64]),
        });
    }
    let manifest = Manifest { seed, samples };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
