//! Segment classifiers: the pluggable contract, a geometric wall/floor/object baseline,
//! and an adapter for an external command.

use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use image::RgbImage;
use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::SaliencyError;
use crate::features::{plane_normal, FeatureVolume};
use crate::region_merge::curvature;
use crate::rgbd_io::encode_png;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentClass {
    pub label: String,
    pub confidence: f64,
}

impl SegmentClass {
    pub fn new(label: &str, confidence: f64) -> Self {
        Self {
            label: label.to_string(),
            confidence: confidence.clamp(0.0, 1.0),
        }
    }
}

/// Everything a classifier may look at for one segment.
pub struct SegmentContext<'a> {
    pub segment_id: u32,
    pub rgb: &'a RgbImage,
    pub features: &'a FeatureVolume,
    pub mask: &'a Array2<bool>,
    /// Square zero-padded crop of the segment.
    pub crop: &'a RgbImage,
    pub scene: &'a SceneExtent,
}

pub trait SegmentClassifier: Send + Sync {
    /// Short identifier recorded in run metadata.
    fn id(&self) -> String;
    fn classify(&self, ctx: &SegmentContext<'_>) -> Result<SegmentClass, SaliencyError>;
}

/// Height range of all valid points in an image, measured along the up direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneExtent {
    pub up: Vector3<f64>,
    pub min_height: f64,
    pub max_height: f64,
}

impl SceneExtent {
    pub fn from_features(features: &FeatureVolume, up: Vector3<f64>) -> Self {
        let mut min_height = f64::INFINITY;
        let mut max_height = f64::NEG_INFINITY;
        for (p, &v) in features.position.iter().zip(features.valid.iter()) {
            if v {
                let h = p.dot(&up);
                min_height = min_height.min(h);
                max_height = max_height.max(h);
            }
        }
        if !min_height.is_finite() {
            (min_height, max_height) = (0.0, 0.0);
        }
        Self {
            up,
            min_height,
            max_height,
        }
    }

    pub fn span(&self) -> f64 {
        self.max_height - self.min_height
    }
}

/// Labels planar segments by orientation and height: `wall`, `floor`, or `object`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricClassifier {
    pub min_planarity: f64,
    /// Walls: |n · up| below this.
    pub wall_max_up: f64,
    /// Walls: height span above this fraction of the scene's.
    pub wall_min_span: f64,
    /// Floors: |n · up| above this.
    pub floor_min_up: f64,
    /// Floors: mean height within this fraction of the scene's bottom.
    pub floor_max_height: f64,
}

impl Default for GeometricClassifier {
    fn default() -> Self {
        Self {
            min_planarity: 0.8,
            wall_max_up: 0.3,
            wall_min_span: 0.5,
            floor_min_up: 0.85,
            floor_max_height: 0.15,
        }
    }
}

/// Camera-frame up for a level camera with image rows growing downward.
pub fn camera_up() -> Vector3<f64> {
    Vector3::new(0.0, -1.0, 0.0)
}

impl GeometricClassifier {
    pub fn classify_points(&self, points: &[Vector3<f64>], scene: &SceneExtent) -> SegmentClass {
        let Ok(planarity) = curvature(points) else {
            return SegmentClass::new("object", 0.5);
        };
        if planarity <= self.min_planarity {
            return SegmentClass::new("object", 1.0 - planarity);
        }
        let up_component = plane_normal(points).0.dot(&scene.up).abs();
        let heights: Vec<f64> = points.iter().map(|p| p.dot(&scene.up)).collect();
        let lo = heights.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = heights.iter().sum::<f64>() / heights.len() as f64;
        let span = scene.span();
        if span > 0.0 {
            if up_component < self.wall_max_up && (hi - lo) / span > self.wall_min_span {
                return SegmentClass::new("wall", planarity);
            }
            if up_component > self.floor_min_up && (mean - scene.min_height) / span < self.floor_max_height {
                return SegmentClass::new("floor", planarity);
            }
        }
        SegmentClass::new("object", planarity)
    }
}

impl SegmentClassifier for GeometricClassifier {
    fn id(&self) -> String {
        "geometric".into()
    }

    fn classify(&self, ctx: &SegmentContext<'_>) -> Result<SegmentClass, SaliencyError> {
        if !ctx.mask.iter().any(|&m| m) {
            return Err(SaliencyError::EmptySegment(ctx.segment_id));
        }
        let points: Vec<Vector3<f64>> = ctx
            .mask
            .indexed_iter()
            .filter(|&(rc, &m)| m && ctx.features.valid[rc])
            .map(|(rc, _)| ctx.features.position[rc])
            .collect();
        Ok(self.classify_points(&points, ctx.scene))
    }
}

/// Runs `program args... <crop.png>` per segment and reads `label,confidence` from the
/// first line of its standard output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalClassifier {
    pub program: String,
    pub args: Vec<String>,
    /// Where crops are written for the command to read.
    pub work_dir: PathBuf,
}

pub fn parse_classifier_line(line: &str) -> Result<SegmentClass, SaliencyError> {
    let bad = || SaliencyError::Classifier(format!("expected `label,confidence`, got {line:?}"));
    let (label, conf) = line.trim().rsplit_once(',').ok_or_else(bad)?;
    let confidence: f64 = conf.trim().parse().map_err(|_| bad())?;
    let label = label.trim();
    if label.is_empty() || !(0.0..=1.0).contains(&confidence) {
        return Err(bad());
    }
    Ok(SegmentClass::new(label, confidence))
}

impl SegmentClassifier for ExternalClassifier {
    fn id(&self) -> String {
        format!("external:{}", self.program)
    }

    fn classify(&self, ctx: &SegmentContext<'_>) -> Result<SegmentClass, SaliencyError> {
        std::fs::create_dir_all(&self.work_dir).map_err(|e| SaliencyError::Classifier(e.to_string()))?;
        static NEXT: AtomicU64 = AtomicU64::new(0);
        let crop_path = self.work_dir.join(format!(
            "segment_{:05}_{}_{}.png",
            ctx.segment_id,
            std::process::id(),
            NEXT.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&crop_path, encode_png(&image::DynamicImage::ImageRgb8(ctx.crop.clone())))
            .map_err(|e| SaliencyError::Classifier(e.to_string()))?;
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(&crop_path)
            .output();
        let _ = std::fs::remove_file(&crop_path);
        let output = output.map_err(|e| SaliencyError::Classifier(format!("{}: {e}", self.program)))?;
        if !output.status.success() {
            return Err(SaliencyError::Classifier(format!(
                "{} exited with {}",
                self.program, output.status
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        parse_classifier_line(stdout.lines().next().unwrap_or(""))
    }
}
