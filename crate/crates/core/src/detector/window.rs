use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in image pixels; `(x, y)` is the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }

    pub fn fits(&self, image_width: usize, image_height: usize) -> bool {
        self.width > 0 && self.height > 0 && self.right() <= image_width && self.bottom() <= image_height
    }

    /// True when the point lies in `[x, x+w) × [y, y+h)`.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64 && px < self.right() as f64 && py >= self.y as f64 && py < self.bottom() as f64
    }
}

/// Intersection over union of two windows; 0 when either is empty.
pub fn iou(a: &Window, b: &Window) -> f64 {
    let iw = a.right().min(b.right()).saturating_sub(a.x.max(b.x));
    let ih = a.bottom().min(b.bottom()).saturating_sub(a.y.max(b.y));
    let inter = (iw * ih) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        let a = Window::new(0, 0, 2, 2);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &Window::new(1, 0, 2, 2)), 1.0 / 3.0);
        assert_eq!(iou(&a, &Window::new(2, 0, 2, 2)), 0.0);
        assert_eq!(iou(&a, &Window::new(5, 5, 1, 1)), 0.0);
    }

    fn window() -> impl Strategy<Value = Window> {
        (0usize..50, 0usize..50, 1usize..30, 1usize..30).prop_map(|(x, y, w, h)| Window::new(x, y, w, h))
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in window(), b in window()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }
}
