//! Fundus image preprocessing and dataset handling: PNG decoding, the RGB /
//! green / high-contrast filters, bilinear resizing, diagnosis manifests with
//! seeded train/validation splits, label encodings and augmentation.

pub mod augment;
pub mod batch;
pub mod dataset;
pub mod error;
pub mod filter;
pub mod image;
pub mod resize;
pub mod synthetic;

pub use augment::{augment, augment_with, AugmentParams};
pub use dataset::{
    load_manifest, one_hot, ordinal, split, DatasetManifest, LabelEncoding, SampleRecord,
    SplitManifest, Subset, NUM_CLASSES,
};
pub use error::{Error, Result};
pub use filter::{equalize_channel, green_filter, high_contrast, FilterKind};
pub use image::ImageRGB8;
pub use resize::{resize, resize_square, DEFAULT_SIZE};
