//! Images, patches, annotations, augmentation and the synthetic ear oracle.

pub mod augment;
pub mod dataset;
pub mod image;
pub mod manifest;
pub mod patch;
pub mod synthetic;

pub use augment::{augment, augment_dataset, flip_h, flip_v, AugmentOp};
pub use dataset::{build_patch_dataset, build_patch_samples, negatives_per_image, plan_crops, Crop, NEGATIVES_PER_POSITIVE};
pub use image::{decode_image, encode_image, read_image, write_image, ImageFormat, RgbImage};
pub use manifest::{load_samples, split_dataset, split_indices, Manifest, ManifestRecord};
pub use patch::{
    extract_patch, image_to_tensor, resample, tensor_to_image, to_patch_coords, Label, PatchSample,
};
pub use synthetic::{generate_synthetic_ear, synthetic_corpus, Background, EarParams, SyntheticEarTruth, TruthSidecar, sidecar_path};
