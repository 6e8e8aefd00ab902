//! Brute-force suppression oracle and random detection sets.

use kernelcount::detector::{Detection, Window};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Intersection over union computed by counting covered pixels.
pub fn pixel_iou(a: &Window, b: &Window) -> f64 {
    let (x0, y0) = (a.x.min(b.x), a.y.min(b.y));
    let (x1, y1) = (a.right().max(b.right()), a.bottom().max(b.bottom()));
    let (mut inter, mut union) = (0usize, 0usize);
    for y in y0..y1 {
        for x in x0..x1 {
            let ina = x >= a.x && x < a.right() && y >= a.y && y < a.bottom();
            let inb = x >= b.x && x < b.right() && y >= b.y && y < b.bottom();
            inter += (ina && inb) as usize;
            union += (ina || inb) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `i` outranks `j` when it is more confident, or equally confident and
/// earlier in the input.
fn outranks(ds: &[Detection], i: usize, j: usize) -> bool {
    ds[i].confidence > ds[j].confidence || (ds[i].confidence == ds[j].confidence && i < j)
}

/// Indices kept by greedy suppression, from its fixed-point definition: a
/// detection survives exactly when no surviving detection that outranks it
/// overlaps it above the threshold. Resolved by memoized recursion over the
/// unsorted input.
pub fn oracle_keep(ds: &[Detection], threshold: f64) -> Vec<usize> {
    fn kept(i: usize, ds: &[Detection], t: f64, memo: &mut Vec<Option<bool>>) -> bool {
        if let Some(k) = memo[i] {
            return k;
        }
        let mut keep = true;
        for j in 0..ds.len() {
            if j != i && outranks(ds, j, i) && pixel_iou(&ds[j].window, &ds[i].window) > t && kept(j, ds, t, memo) {
                keep = false;
                break;
            }
        }
        memo[i] = Some(keep);
        keep
    }
    let mut memo = vec![None; ds.len()];
    (0..ds.len()).filter(|&i| kept(i, ds, threshold, &mut memo)).collect()
}

/// Up to 50 boxes clustered in a small field, with some repeated
/// confidences so ties are exercised.
pub fn random_detections(rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let n = rng.gen_range(0..=50);
    (0..n)
        .map(|_| {
            let confidence = if rng.gen_bool(0.2) { 0.75 } else { rng.gen_range(0.5..1.0) };
            Detection {
                window: Window::new(rng.gen_range(0..60), rng.gen_range(0..60), rng.gen_range(1..30), rng.gen_range(1..40)),
                confidence,
                center: None,
            }
        })
        .collect()
}
