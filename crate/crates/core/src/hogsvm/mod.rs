//! HOG features plus a linear SVM: the classical comparison classifier.

pub mod hog;
pub mod svm;

pub use hog::{grayscale, hog_features, patch_features, GrayImage, HogConfig};
pub use svm::{svm_classify, train_svm, SvmModel};

use crate::data::PatchSample;
use crate::error::Result;

/// HOG descriptor configuration paired with a trained linear SVM.
#[derive(Clone, Debug, PartialEq)]
pub struct HogSvm {
    pub hog: HogConfig,
    pub svm: SvmModel,
}

impl HogSvm {
    pub fn train(samples: &[PatchSample], hog: HogConfig, regularization: f64, epochs: usize, seed: u64) -> Result<Self> {
        let features = samples
            .iter()
            .map(|s| patch_features(&s.patch, &hog))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<i8> = samples.iter().map(|s| if s.label.is_kernel() { 1 } else { -1 }).collect();
        Ok(Self { hog, svm: train_svm(&features, &labels, regularization, epochs, seed)? })
    }

    /// True when the patch is classified as a kernel.
    pub fn is_kernel(&self, sample: &PatchSample) -> Result<bool> {
        Ok(svm_classify(&self.svm, &patch_features(&sample.patch, &self.hog)?)?.0 > 0)
    }
}
