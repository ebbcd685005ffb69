//! Volumetric-saliency summarization of RGB-D images.
//!
//! An RGB-D frame is over-segmented with a depth- and normal-aware SLIC, the superpixels
//! are merged using per-region Gaussian/von Mises-Fisher mixtures and texture, each merged
//! segment is scored by the volume of its oriented bounding box, and segments that are
//! small or belong to the room shell (wall, floor) are masked out. The remaining pixels
//! form the image summary.

use std::path::PathBuf;

use thiserror::Error;

pub mod config;
pub mod evaluation;
pub mod features;
pub mod labeling;
pub mod mixture;
pub mod pipeline;
pub mod region_merge;
pub mod rgbd_io;
pub mod scene_classify;
pub mod superpixel;
pub mod synthetic;
pub mod vol_saliency;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Load(#[from] rgbd_io::IoError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Superpixel(#[from] superpixel::SlicError),
    #[error(transparent)]
    Mixture(#[from] mixture::MixtureError),
    #[error(transparent)]
    Region(#[from] region_merge::RegionError),
    #[error(transparent)]
    Saliency(#[from] vol_saliency::SaliencyError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvalError),
    #[error(transparent)]
    Scene(#[from] scene_classify::SceneError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
