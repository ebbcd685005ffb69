//! Per-pixel visio-spatio features: LAB color, back-projected 3-D position, surface
//! normal, and region-level GLCM texture.

pub mod color;
pub mod geometry;
pub mod glcm;

use std::path::Path;

use nalgebra::Vector3;
use ndarray::Array2;
use thiserror::Error;

pub use color::{luma, rgb8_to_lab, rgb_to_lab};
pub use geometry::{depth_to_pointcloud, estimate_normals, plane_normal, NormalParams};
pub use glcm::{glcm_features, region_glcm, GlcmFeatures, GlcmParams};

use crate::rgbd_io::{write_vsdp, RgbdImage};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("only {valid} valid points, need at least k = {k}")]
    InsufficientPoints { valid: usize, k: usize },
    #[error("GLCM window has no in-bounds pixel pairs")]
    DegenerateWindow,
    #[error("invalid feature parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    /// `[L, a, b]` per pixel.
    pub lab: Array2<[f64; 3]>,
    /// Camera-frame meters; zero where depth is missing.
    pub position: Array2<Vector3<f64>>,
    /// Unit, camera-facing; zero where `valid` is false.
    pub normal: Array2<Vector3<f64>>,
    /// Depth present and a normal could be estimated.
    pub valid: Array2<bool>,
    /// 8-bit luma used for texture statistics.
    pub gray: Array2<u8>,
}

impl FeatureVolume {
    pub fn compute(image: &RgbdImage, normals: &NormalParams) -> Result<Self, FeatureError> {
        let (h, w) = image.depth.dim();
        let pixel = |r: usize, c: usize| image.rgb.get_pixel(c as u32, r as u32).0;
        let lab = Array2::from_shape_fn((h, w), |(r, c)| rgb8_to_lab(pixel(r, c)));
        let gray = Array2::from_shape_fn((h, w), |(r, c)| luma(pixel(r, c)));
        let (position, depth_valid) = depth_to_pointcloud(&image.depth, &image.intrinsics);
        let (normal, valid) = estimate_normals(&position, &depth_valid, normals)?;
        Ok(Self {
            lab,
            position,
            normal,
            valid,
            gray,
        })
    }

    pub fn height(&self) -> usize {
        self.valid.nrows()
    }

    pub fn width(&self) -> usize {
        self.valid.ncols()
    }

    /// Dumps the nine feature planes as VSDP rasters into `dir`.
    pub fn write_debug_planes(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, name) in ["lab_l", "lab_a", "lab_b"].iter().enumerate() {
            write_vsdp(&dir.join(format!("{name}.vsdp")), &self.lab.mapv(|v| v[i]))?;
        }
        for (i, name) in ["pos_x", "pos_y", "pos_z"].iter().enumerate() {
            write_vsdp(&dir.join(format!("{name}.vsdp")), &self.position.mapv(|v| v[i]))?;
        }
        for (i, name) in ["normal_x", "normal_y", "normal_z"].iter().enumerate() {
            write_vsdp(&dir.join(format!("{name}.vsdp")), &self.normal.mapv(|v| v[i]))?;
        }
        Ok(())
    }
}
