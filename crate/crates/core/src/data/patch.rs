use serde::{Deserialize, Serialize};

use crate::data::RgbImage;
use crate::detector::Window;
use crate::error::{bail, Result};
use crate::nn::Tensor;
use crate::{PATCH_SHAPE, PATCH_SIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Kernel,
    NonKernel,
}

impl Label {
    pub fn is_kernel(self) -> bool {
        self == Label::Kernel
    }

    /// 1 for kernel, 0 otherwise.
    pub fn target(self) -> f32 {
        if self.is_kernel() {
            1.0
        } else {
            0.0
        }
    }
}

/// A 32×32×3 patch with values in [0, 1] and its annotation. `center` is in
/// patch pixel coordinates (0..32 on both axes) and only present on kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub patch: Tensor<f32>,
    pub label: Label,
    pub center: Option<[f32; 2]>,
}

impl PatchSample {
    pub fn new(patch: Tensor<f32>, label: Label, center: Option<[f32; 2]>) -> Result<Self> {
        if patch.shape() != PATCH_SHAPE {
            bail!(Shape, "patch must be {PATCH_SHAPE:?}, got {:?}", patch.shape());
        }
        if center.is_some() && !label.is_kernel() {
            bail!(InvalidArgument, "only kernel patches carry a center");
        }
        if let Some([x, y]) = center {
            let side = PATCH_SIDE as f32;
            if !(0.0..=side).contains(&x) || !(0.0..=side).contains(&y) {
                bail!(InvalidArgument, "center ({x}, {y}) lies outside the patch");
            }
        }
        Ok(Self { patch, label, center })
    }

    /// Center scaled to [0, 1]² (regression target).
    pub fn normalized_center(&self) -> Option<[f32; 2]> {
        let s = PATCH_SIDE as f32;
        self.center.map(|[x, y]| [x / s, y / s])
    }
}

/// Source coordinate of output sample `i` when `len` source pixels starting at
/// `start` are resampled to `out` samples (pixel-center alignment), clamped
/// into the source span.
#[inline]
fn source_coord(start: usize, len: usize, out: usize, i: usize) -> (usize, usize, f32) {
    let s = start as f64 + (i as f64 + 0.5) * len as f64 / out as f64 - 0.5;
    let lo = start as f64;
    let hi = (start + len - 1) as f64;
    let s = s.clamp(lo, hi);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(start + len - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Bilinear resample of `window` to `out_w × out_h`, values scaled to [0, 1].
/// Returns an `[out_h, out_w, 3]` tensor.
pub fn resample(image: &RgbImage, window: &Window, out_w: usize, out_h: usize) -> Result<Tensor<f32>> {
    if !window.fits(image.width(), image.height()) {
        bail!(
            InvalidArgument,
            "window {window:?} is not inside the {}x{} image",
            image.width(),
            image.height()
        );
    }
    if out_w == 0 || out_h == 0 {
        bail!(InvalidArgument, "resample target must be non-empty");
    }
    let xs: Vec<_> = (0..out_w)
        .map(|u| source_coord(window.x, window.width, out_w, u))
        .collect();
    let px = image.pixels();
    let stride = image.width() * 3;
    let mut out = Vec::with_capacity(out_w * out_h * 3);
    for v in 0..out_h {
        let (y0, y1, ty) = source_coord(window.y, window.height, out_h, v);
        for &(x0, x1, tx) in &xs {
            for c in 0..3 {
                let p = |x: usize, y: usize| px[y * stride + x * 3 + c] as f32;
                let top = (1.0 - tx) * p(x0, y0) + tx * p(x1, y0);
                let bot = (1.0 - tx) * p(x0, y1) + tx * p(x1, y1);
                out.push(((1.0 - ty) * top + ty * bot) / 255.0);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, 3], out)
}

/// Crops `window` and resizes it to the 32×32×3 network input.
pub fn extract_patch(image: &RgbImage, window: &Window) -> Result<Tensor<f32>> {
    resample(image, window, PATCH_SIDE, PATCH_SIDE)
}

/// Maps an image-space point inside `window` to patch pixel coordinates.
pub fn to_patch_coords(window: &Window, x: f64, y: f64) -> [f32; 2] {
    let s = PATCH_SIDE as f64;
    [
        ((x - window.x as f64) * s / window.width as f64) as f32,
        ((y - window.y as f64) * s / window.height as f64) as f32,
    ]
}

/// Quantizes a [0, 1] `[h, w, 3]` tensor to an 8-bit image.
pub fn tensor_to_image(t: &Tensor<f32>) -> Result<RgbImage> {
    let [h, w, 3] = *t.shape() else {
        bail!(Shape, "expected an HxWx3 tensor, got {:?}", t.shape());
    };
    let px = t
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::new(w, h, px)
}

pub fn image_to_tensor(image: &RgbImage) -> Tensor<f32> {
    let data = image.pixels().iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![image.height(), image.width(), 3], data).expect("image buffer length is checked")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_image(w: usize, h: usize) -> RgbImage {
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                px.extend_from_slice(&[(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]);
            }
        }
        RgbImage::new(w, h, px).unwrap()
    }

    #[test]
    fn window_of_patch_size_is_identity() {
        let img = gradient_image(40, 40);
        let win = Window::new(3, 5, 32, 32);
        let p = extract_patch(&img, &win).unwrap();
        for v in 0..32 {
            for u in 0..32 {
                let rgb = img.get(3 + u, 5 + v);
                for c in 0..3 {
                    assert_eq!(p.data()[(v * 32 + u) * 3 + c], rgb[c] as f32 / 255.0);
                }
            }
        }
    }

    #[test]
    fn narrow_window_is_stretched() {
        let img = gradient_image(30, 40);
        let p = extract_patch(&img, &Window::new(0, 0, 22, 32)).unwrap();
        assert_eq!(p.shape(), &[32, 32, 3]);
        // Rows map one to one; columns interpolate between source pixels.
        let red = |u: usize| p.data()[u * 3] * 255.0;
        assert_eq!(red(0), 0.0);
        assert!((red(31) - 21.0 * 7.0).abs() < 1e-3);
        for u in 1..32 {
            assert!(red(u) >= red(u - 1));
        }
    }

    #[test]
    fn constant_region_gives_constant_patch() {
        let img = RgbImage::filled(50, 50, [10, 200, 90]);
        let p = extract_patch(&img, &Window::new(7, 2, 22, 32)).unwrap();
        for px in p.data().chunks(3) {
            assert_eq!(px, &[10.0 / 255.0, 200.0 / 255.0, 90.0 / 255.0]);
        }
    }

    #[test]
    fn out_of_bounds_window_is_rejected() {
        let img = RgbImage::filled(30, 30, [0; 3]);
        assert!(extract_patch(&img, &Window::new(10, 0, 22, 32)).is_err());
        assert!(extract_patch(&img, &Window::new(0, 0, 0, 10)).is_err());
    }

    #[test]
    fn sample_validation() {
        let t = Tensor::zeros(&PATCH_SHAPE);
        assert!(PatchSample::new(t.clone(), Label::NonKernel, Some([1.0, 1.0])).is_err());
        assert!(PatchSample::new(t.clone(), Label::Kernel, Some([33.0, 1.0])).is_err());
        assert!(PatchSample::new(Tensor::zeros(&[32, 32, 1]), Label::Kernel, None).is_err());
        let s = PatchSample::new(t, Label::Kernel, Some([8.0, 16.0])).unwrap();
        assert_eq!(s.normalized_center(), Some([0.25, 0.5]));
    }

    proptest! {
        #[test]
        fn patch_values_are_normalized(x in 0usize..20, y in 0usize..10, w in 1usize..40, h in 1usize..40) {
            let img = gradient_image(60, 50);
            let p = extract_patch(&img, &Window::new(x, y, w, h)).unwrap();
            prop_assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn column_strip_matches_individual_windows(x in 0usize..20, w in 10usize..40, y in 0usize..18) {
            let img = gradient_image(60, 50);
            let strip = resample(&img, &Window::new(x, 0, w, 50), 32, 50).unwrap();
            let p = extract_patch(&img, &Window::new(x, y, w, 32)).unwrap();
            prop_assert_eq!(p.data(), &strip.data()[y * 32 * 3..(y + 32) * 32 * 3]);
        }
    }
}
