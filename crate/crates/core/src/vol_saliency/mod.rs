//! Volumetric saliency: OBB volume per segment, normalized scores, the τ / unwanted-class
//! gate, and the masked summary image with per-segment crops.

pub mod classify;
pub mod hull;
pub mod obb;

use std::collections::BTreeSet;

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{
    camera_up, ExternalClassifier, GeometricClassifier, SceneExtent, SegmentClass, SegmentClassifier,
    SegmentContext,
};
pub use hull::{convex_hull, ConvexHull, HullDimension};
pub use obb::{aabb_volume, obb_from_hull, pca_obb, OrientedBoundingBox};

use crate::features::FeatureVolume;
use crate::labeling::Labeling;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("segment {0} has no pixels")]
    EmptySegment(u32),
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("image is {image:?} but labeling is {labels:?}")]
    DimensionMismatch {
        image: (usize, usize),
        labels: (usize, usize),
    },
    #[error("classifier failed: {0}")]
    Classifier(String),
}

/// Minimum points for a segment to receive a volume.
pub const MIN_SEGMENT_POINTS: usize = 4;
/// A tail of a segment's points is detached when a gap wider than this (meters) along a
/// principal axis separates it from the rest.
pub const DETACHED_GAP: f64 = 0.1;
/// Largest share of a segment's points that may be dropped as detached tails.
pub const DETACHED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFlag {
    TooFewPoints,
    /// Hull fell back to a plane, segment, or point; the box is flat.
    DegenerateHull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentVolume {
    pub obb: Option<OrientedBoundingBox>,
    pub volume: f64,
    pub score: f64,
    pub point_count: usize,
    /// Points left out of the box as detached tails.
    pub detached_points: usize,
    pub flag: Option<ScoreFlag>,
}

/// Valid 3-D points of each segment, indexed by label.
pub fn segment_points(features: &FeatureVolume, labeling: &Labeling) -> Vec<Vec<Vector3<f64>>> {
    let mut out = vec![Vec::new(); labeling.num_regions];
    for ((rc, &l), &valid) in labeling.labels.indexed_iter().zip(features.valid.iter()) {
        if valid {
            out[l as usize].push(features.position[rc]);
        }
    }
    out
}

/// Drops small tails of `points` that sit apart from the rest: along each principal axis,
/// at most [`DETACHED_FRACTION`] of the points at either end, cut at a gap wider than
/// [`DETACHED_GAP`]. Mixed pixels on occlusion edges land in the wrong segment this way and
/// would otherwise set its box volume.
pub fn trim_detached(points: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let budget = (points.len() as f64 * DETACHED_FRACTION).floor() as usize;
    if budget == 0 {
        return points.to_vec();
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let cov = points.iter().fold(nalgebra::Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n;
    let axes = nalgebra::SymmetricEigen::new(cov).eigenvectors;
    let mut kept: Vec<Vector3<f64>> = points.to_vec();
    let mut dropped = 0;
    for k in 0..3 {
        let axis = axes.column(k).into_owned();
        let mut proj: Vec<(f64, usize)> = kept.iter().enumerate().map(|(i, p)| (p.dot(&axis), i)).collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let m = proj.len();
        let left = budget - dropped;
        // widest allowed cut at each end: the last qualifying gap within the budget
        let low = (0..left.min(m - 1))
            .filter(|&i| proj[i + 1].0 - proj[i].0 > DETACHED_GAP)
            .last()
            .map_or(0, |i| i + 1);
        let high = (0..(left - low).min(m - 1 - low))
            .filter(|&j| proj[m - 1 - j].0 - proj[m - 2 - j].0 > DETACHED_GAP)
            .last()
            .map_or(0, |j| j + 1);
        if low + high == 0 {
            continue;
        }
        let mut keep = vec![false; m];
        for &(_, i) in &proj[low..m - high] {
            keep[i] = true;
        }
        kept = kept.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();
        dropped += low + high;
    }
    kept
}

pub fn segment_obb(points: &[Vector3<f64>]) -> (OrientedBoundingBox, HullDimension) {
    let hull = convex_hull(points);
    (obb_from_hull(&hull), hull.dimension)
}

/// OBB volume per segment (after [`trim_detached`]), normalized by the image's largest
/// volume. Segments with fewer than [`MIN_SEGMENT_POINTS`] points score 0 and are flagged.
pub fn saliency_scores(segments: &[Vec<Vector3<f64>>]) -> Vec<SegmentVolume> {
    let mut out: Vec<SegmentVolume> = segments
        .par_iter()
        .map(|pts| {
            if pts.len() < MIN_SEGMENT_POINTS {
                return SegmentVolume {
                    obb: None,
                    volume: 0.0,
                    score: 0.0,
                    point_count: pts.len(),
                    detached_points: 0,
                    flag: Some(ScoreFlag::TooFewPoints),
                };
            }
            let core = trim_detached(pts);
            let (obb, dim) = segment_obb(&core);
            SegmentVolume {
                volume: obb.volume(),
                obb: Some(obb),
                score: 0.0,
                point_count: pts.len(),
                detached_points: pts.len() - core.len(),
                flag: (dim != HullDimension::Solid).then_some(ScoreFlag::DegenerateHull),
            }
        })
        .collect();
    let max = out.iter().map(|s| s.volume).fold(0.0, f64::max);
    if max > 0.0 {
        for s in &mut out {
            s.score = s.volume / max;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskOptions {
    pub tau: f64,
    /// Unwanted classes.
    pub rho: BTreeSet<String>,
    /// Drop a segment only when it is both below τ and unwanted, instead of either.
    pub strict_and: bool,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self {
            tau: 0.2,
            rho: ["wall", "floor"].iter().map(|s| s.to_string()).collect(),
            strict_and: false,
        }
    }
}

pub fn keep_segment(score: f64, class: &str, options: &MaskOptions) -> bool {
    let below = score < options.tau;
    let unwanted = options.rho.contains(class);
    if options.strict_and {
        !(below && unwanted)
    } else {
        !(below || unwanted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencySummary {
    pub scores: Vec<f64>,
    pub classes: Vec<SegmentClass>,
    #[serde(skip)]
    pub mask: Array2<bool>,
    pub kept_segments: Vec<u32>,
    pub options: MaskOptions,
    pub classifier_id: String,
}

/// Applies the τ / unwanted-class gate and rasterizes the kept segments.
pub fn generate_mask(
    labeling: &Labeling,
    scores: &[f64],
    classes: &[SegmentClass],
    options: &MaskOptions,
    classifier_id: &str,
) -> Result<SaliencySummary, SaliencyError> {
    let n = labeling.num_regions;
    for got in [scores.len(), classes.len()] {
        if got != n {
            return Err(SaliencyError::LengthMismatch { expected: n, got });
        }
    }
    let keep: Vec<bool> = scores
        .iter()
        .zip(classes)
        .map(|(&s, c)| keep_segment(s, &c.label, options))
        .collect();
    Ok(SaliencySummary {
        scores: scores.to_vec(),
        classes: classes.to_vec(),
        mask: labeling.labels.mapv(|l| keep[l as usize]),
        kept_segments: (0..n as u32).filter(|&i| keep[i as usize]).collect(),
        options: options.clone(),
        classifier_id: classifier_id.to_string(),
    })
}

/// RGB with everything outside `mask` set to black.
pub fn summarize(rgb: &RgbImage, mask: &Array2<bool>) -> RgbImage {
    RgbImage::from_fn(rgb.width(), rgb.height(), |x, y| {
        if mask[[y as usize, x as usize]] {
            *rgb.get_pixel(x, y)
        } else {
            Rgb([0, 0, 0])
        }
    })
}

/// The segment's bounding box with non-segment pixels blacked out, zero-padded to a
/// centered square.
pub fn segment_crop(rgb: &RgbImage, mask: &Array2<bool>) -> Option<RgbImage> {
    let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
    for ((r, c), &m) in mask.indexed_iter() {
        if m {
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
        }
    }
    if r0 == usize::MAX {
        return None;
    }
    let (h, w) = (r1 - r0 + 1, c1 - c0 + 1);
    let side = h.max(w);
    let (dr, dc) = ((side - h) / 2, (side - w) / 2);
    let mut out = RgbImage::new(side as u32, side as u32);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if mask[[r, c]] {
                out.put_pixel((c - c0 + dc) as u32, (r - r0 + dr) as u32, *rgb.get_pixel(c as u32, r as u32));
            }
        }
    }
    Some(out)
}

pub fn segment_mask(labeling: &Labeling, id: u32) -> Array2<bool> {
    labeling.labels.mapv(|l| l == id)
}

/// Classifies every segment in parallel.
pub fn classify_segments(
    rgb: &RgbImage,
    features: &FeatureVolume,
    labeling: &Labeling,
    classifier: &dyn SegmentClassifier,
) -> Result<Vec<SegmentClass>, SaliencyError> {
    let scene = SceneExtent::from_features(features, camera_up());
    (0..labeling.num_regions as u32)
        .into_par_iter()
        .map(|id| {
            let mask = segment_mask(labeling, id);
            let crop = segment_crop(rgb, &mask).ok_or(SaliencyError::EmptySegment(id))?;
            classifier.classify(&SegmentContext {
                segment_id: id,
                rgb,
                features,
                mask: &mask,
                crop: &crop,
                scene: &scene,
            })
        })
        .collect()
}

/// One row of the scores sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: u32,
    pub volume_m3: f64,
    pub score: f64,
    pub class: String,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresSidecar {
    pub tau: f64,
    pub rho: Vec<String>,
    /// `"or"` drops segments below τ or unwanted; `"and"` needs both.
    pub gate: String,
    pub normalization: String,
    pub classifier: String,
    pub segments: Vec<SegmentRecord>,
}

pub fn scores_sidecar(volumes: &[SegmentVolume], summary: &SaliencySummary) -> ScoresSidecar {
    let kept: BTreeSet<u32> = summary.kept_segments.iter().copied().collect();
    ScoresSidecar {
        tau: summary.options.tau,
        rho: summary.options.rho.iter().cloned().collect(),
        gate: if summary.options.strict_and { "and" } else { "or" }.into(),
        normalization: "per_image_max".into(),
        classifier: summary.classifier_id.clone(),
        segments: volumes
            .iter()
            .zip(&summary.classes)
            .enumerate()
            .map(|(i, (v, c))| SegmentRecord {
                segment_id: i as u32,
                volume_m3: v.volume,
                score: v.score,
                class: c.label.clone(),
                kept: kept.contains(&(i as u32)),
            })
            .collect(),
    }
}

/// Depth-only saliency: inverse depth scaled to `[0, 1]` and cut at twice its mean.
pub fn depth_only_mask(depth: &Array2<f64>) -> Array2<bool> {
    let valid: Vec<f64> = depth.iter().copied().filter(|&d| d > 0.0).collect();
    if valid.is_empty() {
        return Array2::from_elem(depth.dim(), false);
    }
    let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (hi - lo).max(f64::EPSILON);
    let sal = depth.mapv(|d| if d > 0.0 { (hi - d) / range } else { 0.0 });
    let thr = (2.0 * sal.mean().unwrap_or(0.0)).min(1.0);
    sal.mapv(|s| s >= thr && s > 0.0)
}

/// An axis-aligned rectangle covering about `coverage` of the image at a random position.
pub fn random_mask(height: usize, width: usize, coverage: f64, seed: u64) -> Array2<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coverage = coverage.clamp(0.0, 1.0);
    let aspect: f64 = rng.gen_range(0.5..2.0);
    let area = coverage * (height * width) as f64;
    let h = ((area / aspect).sqrt().round() as usize).clamp(1, height);
    let w = ((area / h as f64).round() as usize).clamp(1, width);
    if coverage == 0.0 {
        return Array2::from_elem((height, width), false);
    }
    let r0 = rng.gen_range(0..=height - h);
    let c0 = rng.gen_range(0..=width - w);
    Array2::from_shape_fn((height, width), |(r, c)| r >= r0 && r < r0 + h && c >= c0 && c < c0 + w)
}
