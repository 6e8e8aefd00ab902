use serde::{Deserialize, Serialize};

use crate::data::{extract_patch, resample, RgbImage};
use crate::detector::Window;
use crate::error::{bail, Result};
use crate::models::ClassifierNet;
use crate::nn::Tensor;
use crate::PATCH_SIDE;

pub const WINDOW_WIDTH: usize = 22;
pub const WINDOW_HEIGHT: usize = 32;

/// Windows per classifier call on the per-window path.
const BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub window_width: usize,
    pub window_height: usize,
    pub stride_x: usize,
    pub stride_y: usize,
    pub confidence_threshold: f64,
    pub nms_iou_threshold: f64,
    pub count_multiplier: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            window_width: WINDOW_WIDTH,
            window_height: WINDOW_HEIGHT,
            stride_x: 4,
            stride_y: 4,
            confidence_threshold: 0.5,
            nms_iou_threshold: 0.3,
            count_multiplier: 2.5,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_width == 0 || self.window_height == 0 {
            bail!(InvalidArgument, "window size must be positive");
        }
        if self.stride_x == 0 || self.stride_y == 0 {
            bail!(InvalidArgument, "scan strides must be >= 1");
        }
        // Threshold 1.0 is accepted: it simply yields no detections.
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            bail!(InvalidArgument, "confidence threshold must be in (0, 1], got {}", self.confidence_threshold);
        }
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold < 1.0) {
            bail!(InvalidArgument, "NMS IoU threshold must be in (0, 1), got {}", self.nms_iou_threshold);
        }
        if !(self.count_multiplier > 0.0 && self.count_multiplier.is_finite()) {
            bail!(InvalidArgument, "count multiplier must be positive, got {}", self.count_multiplier);
        }
        Ok(())
    }

    /// Top-left corners of every window, row-major.
    pub fn grid(&self, image_width: usize, image_height: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate()?;
        if image_width < self.window_width || image_height < self.window_height {
            bail!(
                InvalidArgument,
                "{image_width}x{image_height} image is smaller than the {}x{} window",
                self.window_width,
                self.window_height
            );
        }
        let xs = (0..=image_width - self.window_width).step_by(self.stride_x).collect();
        let ys = (0..=image_height - self.window_height).step_by(self.stride_y).collect();
        Ok((xs, ys))
    }

    pub fn window_count(&self, image_width: usize, image_height: usize) -> Result<usize> {
        let (xs, ys) = self.grid(image_width, image_height)?;
        Ok(xs.len() * ys.len())
    }
}

/// Classifier confidence for every grid window, row-major.
pub fn scan_confidences(image: &RgbImage, classifier: &ClassifierNet, config: &ScanConfig) -> Result<Vec<(Window, f32)>> {
    let (xs, ys) = config.grid(image.width(), image.height())?;
    let (ww, wh) = (config.window_width, config.window_height);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    if wh == PATCH_SIDE {
        // Rows of a full-height strip map one to one onto patch rows, so the
        // convolutional prefix runs once per column.
        let h = image.height();
        let stride = classifier.row_stride();
        let mut columns = Vec::with_capacity(xs.len());
        for &x in &xs {
            let strip = resample(image, &Window::new(x, 0, ww, h), PATCH_SIDE, h)?;
            let mut conf = vec![0.0f32; ys.len()];
            for parity in 0..stride {
                let picked: Vec<usize> = (0..ys.len()).filter(|&i| ys[i] % stride == parity).collect();
                if picked.is_empty() {
                    continue;
                }
                let offsets: Vec<usize> = picked.iter().map(|&i| ys[i] - parity).collect();
                let sub = if parity == 0 {
                    classifier.strip_confidences(&strip, &offsets)?
                } else {
                    let row = PATCH_SIDE * 3;
                    let shifted = Tensor::new(vec![h - parity, PATCH_SIDE, 3], strip.data()[parity * row..].to_vec())?;
                    classifier.strip_confidences(&shifted, &offsets)?
                };
                for (&i, c) in picked.iter().zip(sub) {
                    conf[i] = c;
                }
            }
            columns.push(conf);
        }
        for (j, &y) in ys.iter().enumerate() {
            for (i, &x) in xs.iter().enumerate() {
                out.push((Window::new(x, y, ww, wh), columns[i][j]));
            }
        }
    } else {
        let windows: Vec<Window> = ys
            .iter()
            .flat_map(|&y| xs.iter().map(move |&x| Window::new(x, y, ww, wh)))
            .collect();
        for chunk in windows.chunks(BATCH) {
            let conf = classifier.confidences(&batch_patches(image, chunk)?)?;
            out.extend(chunk.iter().copied().zip(conf));
        }
    }
    Ok(out)
}

/// Stacks the 32×32 patches of `windows` into one `[n, 32, 32, 3]` batch.
pub(crate) fn batch_patches(image: &RgbImage, windows: &[Window]) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(windows.len() * PATCH_SIDE * PATCH_SIDE * 3);
    for w in windows {
        data.extend_from_slice(extract_patch(image, w)?.data());
    }
    Tensor::new(vec![windows.len(), PATCH_SIDE, PATCH_SIDE, 3], data)
}
