//! Sliding-window detection, suppression, center refinement and counting.

pub mod scan;
pub mod window;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use scan::{scan_confidences, ScanConfig, WINDOW_HEIGHT, WINDOW_WIDTH};
pub use window::{iou, Window};

use crate::data::RgbImage;
use crate::error::{bail, Result};
use crate::models::{ClassifierNet, RegressorNet};

/// A window the classifier accepted, optionally with a refined kernel center
/// in image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "DetectionRecord", try_from = "DetectionRecord")]
pub struct Detection {
    pub window: Window,
    pub confidence: f64,
    pub center: Option<[f64; 2]>,
}

/// Flat JSON form: `{"x","y","w","h","confidence","cx","cy"}`.
#[derive(Serialize, Deserialize)]
struct DetectionRecord {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    confidence: f64,
    #[serde(default)]
    cx: Option<f64>,
    #[serde(default)]
    cy: Option<f64>,
}

impl From<Detection> for DetectionRecord {
    fn from(d: Detection) -> Self {
        Self {
            x: d.window.x,
            y: d.window.y,
            w: d.window.width,
            h: d.window.height,
            confidence: d.confidence,
            cx: d.center.map(|c| c[0]),
            cy: d.center.map(|c| c[1]),
        }
    }
}

impl TryFrom<DetectionRecord> for Detection {
    type Error = String;

    fn try_from(r: DetectionRecord) -> Result<Self, String> {
        let center = match (r.cx, r.cy) {
            (Some(x), Some(y)) => Some([x, y]),
            (None, None) => None,
            _ => return Err("detection has only one of cx, cy".into()),
        };
        Ok(Self {
            window: Window::new(r.x, r.y, r.w, r.h),
            confidence: r.confidence,
            center,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountReport {
    pub detections: Vec<Detection>,
    pub visible_count: usize,
    pub estimated_total: u64,
    pub seconds: f64,
}

impl CountReport {
    /// The report with its wall time zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self { seconds: 0.0, ..self.clone() }
    }
}

/// Every grid window whose confidence reaches the threshold, row-major.
pub fn sliding_window_scan(image: &RgbImage, classifier: &ClassifierNet, config: &ScanConfig) -> Result<Vec<Detection>> {
    Ok(scan_confidences(image, classifier, config)?
        .into_iter()
        .filter(|&(_, c)| c as f64 >= config.confidence_threshold)
        .map(|(window, c)| Detection { window, confidence: c as f64, center: None })
        .collect())
}

/// Greedy suppression: walk detections by descending confidence (earlier
/// input wins ties) and keep each one that overlaps no kept window by more
/// than `iou_threshold`. Output is in visiting order.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].confidence.total_cmp(&detections[a].confidence));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &detections[i];
        if kept.iter().all(|k| iou(&k.window, &d.window) <= iou_threshold) {
            kept.push(d.clone());
        }
    }
    debug_assert!(kept
        .iter()
        .enumerate()
        .all(|(i, a)| kept[i + 1..].iter().all(|b| iou(&a.window, &b.window) <= iou_threshold)));
    kept
}

/// Clamps a normalized regressor output into the window and maps it to image
/// pixels.
pub fn window_point(window: &Window, uv: [f32; 2]) -> [f64; 2] {
    let u = (uv[0] as f64).clamp(0.0, 1.0);
    let v = (uv[1] as f64).clamp(0.0, 1.0);
    [
        window.x as f64 + u * window.width as f64,
        window.y as f64 + v * window.height as f64,
    ]
}

/// Runs the regressor on every detection's patch and attaches the center.
pub fn refine_centers(image: &RgbImage, detections: &[Detection], regressor: &RegressorNet) -> Result<Vec<Detection>> {
    let mut out = Vec::with_capacity(detections.len());
    for chunk in detections.chunks(256) {
        let windows: Vec<Window> = chunk.iter().map(|d| d.window).collect();
        let uv = regressor.centers(&scan::batch_patches(image, &windows)?)?;
        for (d, p) in chunk.iter().zip(uv) {
            out.push(Detection { center: Some(window_point(&d.window, p)), ..d.clone() });
        }
    }
    Ok(out)
}

/// Visible detections scaled by `multiplier`, truncated toward zero.
pub fn count_kernels(detections: &[Detection], multiplier: f64) -> Result<u64> {
    estimate_total(detections.len(), multiplier)
}

pub fn estimate_total(visible: usize, multiplier: f64) -> Result<u64> {
    if !(multiplier > 0.0 && multiplier.is_finite()) {
        bail!(InvalidArgument, "count multiplier must be positive, got {multiplier}");
    }
    Ok((visible as f64 * multiplier).trunc() as u64)
}

/// Scan, suppress, refine and count one image.
pub fn detect_and_count(
    image: &RgbImage,
    classifier: &ClassifierNet,
    regressor: &RegressorNet,
    config: &ScanConfig,
) -> Result<CountReport> {
    let start = Instant::now();
    let found = sliding_window_scan(image, classifier, config)?;
    let kept = nms(&found, config.nms_iou_threshold);
    let detections = refine_centers(image, &kept, regressor)?;
    let estimated_total = count_kernels(&detections, config.count_multiplier)?;
    Ok(CountReport {
        visible_count: detections.len(),
        estimated_total,
        detections,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_ear, EarParams};
    use crate::models::nets::with_stats;
    use crate::models::{build_classifier, build_regressor};
    use proptest::prelude::*;

    fn det(x: usize, y: usize, confidence: f64) -> Detection {
        Detection { window: Window::new(x, y, 22, 32), confidence, center: None }
    }

    #[test]
    fn overlapping_lower_confidence_is_suppressed() {
        let a = Detection { window: Window::new(0, 0, 10, 10), confidence: 0.9, center: None };
        // 10x10 boxes shifted by 2.5 columns worth: inter 75, union 125.
        let b = Detection { window: Window::new(0, 0, 10, 10), confidence: 0.8, center: None };
        let b = Detection { window: Window { x: 0, y: 0, width: 10, height: 6 }, ..b };
        assert!((iou(&a.window, &b.window) - 0.6).abs() < 1e-12);
        assert_eq!(nms(&[b.clone(), a.clone()], 0.3), vec![a]);
    }

    #[test]
    fn disjoint_and_single_inputs_survive() {
        assert_eq!(nms(&[det(3, 4, 0.7)], 0.3), vec![det(3, 4, 0.7)]);
        let spread: Vec<_> = (0..5).map(|i| det(i * 30, 0, 0.6 + i as f64 * 0.01)).collect();
        for t in [0.01, 0.3, 0.99] {
            assert_eq!(nms(&spread, t).len(), 5);
        }
        assert!(nms(&[], 0.3).is_empty());
    }

    #[test]
    fn refinement_map_and_clamp() {
        let w = Window::new(10, 20, 22, 32);
        assert_eq!(window_point(&w, [0.5, 0.5]), [21.0, 36.0]);
        assert_eq!(window_point(&w, [1.7, -0.2]), [32.0, 20.0]);
    }

    #[test]
    fn counts_truncate() {
        assert_eq!(estimate_total(100, 2.5).unwrap(), 250);
        assert_eq!(estimate_total(0, 2.5).unwrap(), 0);
        assert_eq!(estimate_total(125, 2.5).unwrap(), 312);
        assert!(estimate_total(3, 0.0).is_err());
    }

    #[test]
    fn report_json_is_flat() {
        let mut d = det(1, 2, 0.75);
        d.center = Some([5.5, 9.0]);
        let r = CountReport { detections: vec![d, det(7, 8, 0.5)], visible_count: 2, estimated_total: 5, seconds: 0.25 };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["detections"][0]["w"], 22);
        assert_eq!(v["detections"][0]["cy"], 9.0);
        assert!(v["detections"][1]["cx"].is_null());
        assert_eq!(v["estimated_total"], 5);
        let back: CountReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn untrained_pipeline_is_consistent_and_deterministic() {
        let p = EarParams { rows: 3, cols: 3, width: 90, height: 110, ..EarParams::default() };
        let image = generate_synthetic_ear(&p, 2).unwrap().image;
        let (c, r) = (with_stats(build_classifier(3)), build_regressor(4));
        let cfg = ScanConfig { confidence_threshold: 0.05, ..ScanConfig::default() };
        let a = detect_and_count(&image, &c, &r, &cfg).unwrap();
        let b = detect_and_count(&image, &c, &r, &cfg).unwrap();
        assert_eq!(a.without_timing(), b.without_timing());
        assert_eq!(a.visible_count, a.detections.len());
        assert_eq!(a.estimated_total, (a.visible_count as f64 * 2.5) as u64);
        for d in &a.detections {
            let [x, y] = d.center.unwrap();
            assert!(x >= d.window.x as f64 && x <= d.window.right() as f64);
            assert!(y >= d.window.y as f64 && y <= d.window.bottom() as f64);
        }
        let strict = ScanConfig { confidence_threshold: 1.0, ..ScanConfig::default() };
        assert!(sliding_window_scan(&image, &c, &strict).unwrap().is_empty());
    }

    fn detections() -> impl Strategy<Value = Vec<Detection>> {
        proptest::collection::vec((0usize..60, 0usize..60, 1usize..30, 1usize..30, 0.0f64..1.0), 0..30).prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, c)| Detection { window: Window::new(x, y, w, h), confidence: c, center: None })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn kept_windows_respect_threshold(ds in detections(), t in 0.05f64..0.95) {
            let kept = nms(&ds, t);
            prop_assert!(kept.iter().all(|k| ds.contains(k)));
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(iou(&a.window, &b.window) <= t);
                }
            }
            // Every dropped detection overlaps a kept one at least as confident.
            for d in ds.iter().filter(|d| !kept.contains(d)) {
                prop_assert!(kept.iter().any(|k| k.confidence >= d.confidence && iou(&k.window, &d.window) > t));
            }
        }

        #[test]
        fn counts_never_decrease(n in 0usize..10_000, m in 0.1f64..10.0) {
            prop_assert!(estimate_total(n + 1, m).unwrap() >= estimate_total(n, m).unwrap());
        }
    }
}
