//! Dataset ingestion, augmentation, synthetic scenes and run configuration.

mod augment;
mod config;
mod io;
mod manifest;
mod synth;

pub use augment::{apply_crop, draw_crop, random_crop_flip, CropSpec};
pub use config::{apply_override, RunConfig, Seeds};
pub use io::{
    file_sha256, load_labels, load_pair, load_rgb, load_superpixels, save_labels, save_rgb, save_superpixels,
    SuperpixelSidecar,
};
pub use manifest::{load_manifest, write_manifest, ManifestRow, Split};
pub use synth::{gen_synthetic, synthetic_corpus, ShapeKind, SyntheticSceneConfig};

use crate::maps::{LabelMap, RgbImage};

/// An image with its ground-truth category map.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub image: RgbImage,
    pub labels: LabelMap,
}
