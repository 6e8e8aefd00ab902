//! Corn kernel detection and counting.
//!
//! A sliding window is scanned over an ear image; each window is scored by a
//! small CNN, overlapping hits are suppressed, a second CNN regresses the
//! kernel center inside each surviving window, and the one-side count is
//! scaled to a whole-ear estimate. A HOG + linear SVM classifier serves as
//! the comparison baseline, and a procedural ear renderer provides exact
//! ground truth for evaluation.

pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod hogsvm;
pub mod models;
pub mod nn;

pub use error::{Error, Result};

/// Side length of the square patches both networks consume.
pub const PATCH_SIDE: usize = 32;
/// Per-patch tensor shape (height, width, RGB channels).
pub const PATCH_SHAPE: [usize; 3] = [PATCH_SIDE, PATCH_SIDE, 3];
