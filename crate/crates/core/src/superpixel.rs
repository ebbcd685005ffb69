//! SLIC superpixels with a five-term distance over color, pixel position, 3-D location,
//! and surface-normal azimuth/elevation.
//!
//! `D = d_c/m + d_p/S + d_s/a + d_θ/b + d_α/d`. The last three terms need depth and a
//! normal on both sides; when either side lacks them the first two terms are scaled by
//! 5/2 instead. The azimuth difference is wrapped to `[0, π]` and weighted by the smaller
//! `cos α` of the pair, since azimuth is undefined at the poles (camera-facing planes).

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureVolume;
use crate::labeling::{enforce_connectivity, Labeling};

#[derive(Debug, Error)]
pub enum SlicError {
    #[error("{valid} valid pixels cannot seed {requested} superpixels")]
    TooFewValidPixels { valid: usize, requested: usize },
    #[error("invalid SLIC parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub num_superpixels: usize,
    /// Compactness `m`; divides the LAB distance.
    pub compactness: f64,
    /// `a`, meters.
    pub max_spatial: f64,
    /// `b`, radians.
    pub max_azimuth: f64,
    /// `d`, radians.
    pub max_elevation: f64,
    pub max_iters: usize,
    pub enable_spatial_terms: bool,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            num_superpixels: 200,
            compactness: 10.0,
            max_spatial: 0.5,
            max_azimuth: PI / 2.0,
            max_elevation: PI / 2.0,
            max_iters: 10,
            enable_spatial_terms: true,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<(), SlicError> {
        let positive = [self.compactness, self.max_spatial, self.max_azimuth, self.max_elevation];
        if self.num_superpixels == 0 || positive.iter().any(|v| !(*v > 0.0)) || self.max_iters == 0 {
            return Err(SlicError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Feature tuple of a pixel or a cluster center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelFeature {
    pub lab: [f64; 3],
    pub row: f64,
    pub col: f64,
    pub position: Vector3<f64>,
    pub azimuth: f64,
    pub elevation: f64,
    /// Position and direction are defined.
    pub spatial: bool,
}

/// `(azimuth, elevation) = (atan2(n_y, n_x), asin(n_z))` of a unit normal.
pub fn direction_angles(n: &Vector3<f64>) -> (f64, f64) {
    // +0.0 folds signed zeros so exact axis-aligned normals get a stable azimuth
    (f64::atan2(n.y + 0.0, n.x + 0.0), n.z.clamp(-1.0, 1.0).asin())
}

fn wrapped_angle(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % TAU;
    d.min(TAU - d)
}

pub fn pixel_feature(features: &FeatureVolume, row: usize, col: usize) -> PixelFeature {
    let spatial = features.valid[[row, col]];
    let (azimuth, elevation) = if spatial {
        direction_angles(&features.normal[[row, col]])
    } else {
        (0.0, 0.0)
    };
    PixelFeature {
        lab: features.lab[[row, col]],
        row: row as f64,
        col: col as f64,
        position: features.position[[row, col]],
        azimuth,
        elevation,
        spatial,
    }
}

/// Grid interval `S = round(sqrt(HW / K))`, at least 1.
pub fn grid_interval(height: usize, width: usize, num_superpixels: usize) -> usize {
    (((height * width) as f64 / num_superpixels as f64).sqrt().round() as usize).max(1)
}

pub fn pixel_cluster_distance(
    pixel: &PixelFeature,
    center: &PixelFeature,
    params: &SlicParams,
    grid_interval: f64,
) -> f64 {
    let dl = [
        pixel.lab[0] - center.lab[0],
        pixel.lab[1] - center.lab[1],
        pixel.lab[2] - center.lab[2],
    ];
    let d_color = (dl[0] * dl[0] + dl[1] * dl[1] + dl[2] * dl[2]).sqrt();
    let d_pixel = ((pixel.row - center.row).powi(2) + (pixel.col - center.col).powi(2)).sqrt();
    let visual = d_color / params.compactness + d_pixel / grid_interval;
    if !params.enable_spatial_terms {
        return visual;
    }
    if !(pixel.spatial && center.spatial) {
        return visual * 2.5;
    }
    let d_spatial = (pixel.position - center.position).norm();
    let pole_weight = pixel.elevation.cos().min(center.elevation.cos()).max(0.0);
    let d_azimuth = wrapped_angle(pixel.azimuth, center.azimuth) * pole_weight;
    let d_elevation = (pixel.elevation - center.elevation).abs();
    visual
        + d_spatial / params.max_spatial
        + d_azimuth / params.max_azimuth
        + d_elevation / params.max_elevation
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelLabeling {
    pub labeling: Labeling,
    pub centers: Vec<PixelFeature>,
    pub grid_interval: usize,
}

impl SuperpixelLabeling {
    pub fn num_regions(&self) -> usize {
        self.labeling.num_regions
    }

    pub fn labels(&self) -> &Array2<u32> {
        &self.labeling.labels
    }
}

/// Per-cluster mean of pixel features; circular mean for azimuth. Clusters without any
/// member keep `previous`.
pub fn cluster_means(
    pixels: &[PixelFeature],
    labels: &[u32],
    count: usize,
    previous: Option<&[PixelFeature]>,
) -> Vec<PixelFeature> {
    #[derive(Clone, Default)]
    struct Acc {
        n: f64,
        lab: [f64; 3],
        row: f64,
        col: f64,
        ns: f64,
        pos: Vector3<f64>,
        sin: f64,
        cos: f64,
        elev: f64,
    }
    let mut acc = vec![Acc::default(); count];
    for (p, &l) in pixels.iter().zip(labels) {
        let a = &mut acc[l as usize];
        a.n += 1.0;
        for i in 0..3 {
            a.lab[i] += p.lab[i];
        }
        a.row += p.row;
        a.col += p.col;
        if p.spatial {
            a.ns += 1.0;
            a.pos += p.position;
            a.sin += p.azimuth.sin();
            a.cos += p.azimuth.cos();
            a.elev += p.elevation;
        }
    }
    acc.iter()
        .enumerate()
        .map(|(k, a)| {
            if a.n == 0.0 {
                return previous.map(|p| p[k]).unwrap_or(PixelFeature {
                    lab: [0.0; 3],
                    row: 0.0,
                    col: 0.0,
                    position: Vector3::zeros(),
                    azimuth: 0.0,
                    elevation: 0.0,
                    spatial: false,
                });
            }
            let spatial = a.ns > 0.0;
            PixelFeature {
                lab: a.lab.map(|v| v / a.n),
                row: a.row / a.n,
                col: a.col / a.n,
                position: if spatial { a.pos / a.ns } else { Vector3::zeros() },
                azimuth: if spatial { a.sin.atan2(a.cos) } else { 0.0 },
                elevation: if spatial { a.elev / a.ns } else { 0.0 },
                spatial,
            }
        })
        .collect()
}

/// Iteration state of the clustering; exposed so the assignment and update steps can be
/// driven and inspected individually.
pub struct SlicEngine {
    params: SlicParams,
    width: usize,
    height: usize,
    step: usize,
    pixels: Vec<PixelFeature>,
    pub centers: Vec<PixelFeature>,
    /// `u32::MAX` = unassigned.
    pub labels: Vec<u32>,
}

impl SlicEngine {
    pub fn new(features: &FeatureVolume, params: &SlicParams) -> Result<Self, SlicError> {
        params.validate()?;
        let (h, w) = features.valid.dim();
        let valid = features.valid.iter().filter(|v| **v).count();
        if valid < params.num_superpixels {
            return Err(SlicError::TooFewValidPixels {
                valid,
                requested: params.num_superpixels,
            });
        }
        let step = grid_interval(h, w, params.num_superpixels);
        let pixels: Vec<PixelFeature> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .map(|(r, c)| pixel_feature(features, r, c))
            .collect();

        let lab_at = |r: usize, c: usize| features.lab[[r, c]];
        let gradient = |r: usize, c: usize| {
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let d2 = |a: [f64; 3], b: [f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
            d2(lab_at(r, cr), lab_at(r, cl)) + d2(lab_at(rd, c), lab_at(ru, c))
        };
        let mut centers = Vec::new();
        let mut r = step / 2;
        while r < h {
            let mut c = step / 2;
            while c < w {
                let mut best = (gradient(r, c), r, c);
                for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                    for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                        let g = gradient(nr, nc);
                        if g < best.0 {
                            best = (g, nr, nc);
                        }
                    }
                }
                centers.push(pixels[best.1 * w + best.2]);
                c += step;
            }
            r += step;
        }
        Ok(Self {
            params: *params,
            width: w,
            height: h,
            step,
            pixels,
            labels: vec![u32::MAX; h * w],
            centers,
        })
    }

    fn distance(&self, pixel: usize, center: usize) -> f64 {
        pixel_cluster_distance(
            &self.pixels[pixel],
            &self.centers[center],
            &self.params,
            self.step as f64,
        )
    }

    /// Sum of each assigned pixel's distance to its center.
    pub fn objective(&self) -> f64 {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l != u32::MAX)
            .map(|(i, &l)| self.distance(i, l as usize))
            .sum()
    }

    /// Reassigns pixels to the closest center within each center's 2S x 2S window.
    /// A pixel keeps its current center unless a strictly closer one is found.
    pub fn assign(&mut self) {
        let n = self.pixels.len();
        let mut best: Vec<f64> = (0..n)
            .map(|i| match self.labels[i] {
                u32::MAX => f64::INFINITY,
                l => self.distance(i, l as usize),
            })
            .collect();
        let s = self.step as isize;
        for k in 0..self.centers.len() {
            let cr = self.centers[k].row.round() as isize;
            let cc = self.centers[k].col.round() as isize;
            let r0 = (cr - s).max(0) as usize;
            let r1 = ((cr + s) as usize).min(self.height - 1);
            let c0 = (cc - s).max(0) as usize;
            let c1 = ((cc + s) as usize).min(self.width - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let i = r * self.width + c;
                    let d = self.distance(i, k);
                    if d < best[i] {
                        best[i] = d;
                        self.labels[i] = k as u32;
                    }
                }
            }
        }
        for i in 0..n {
            if self.labels[i] == u32::MAX {
                let mut choice = (f64::INFINITY, 0usize);
                for k in 0..self.centers.len() {
                    let d = self.distance(i, k);
                    if d < choice.0 {
                        choice = (d, k);
                    }
                }
                self.labels[i] = choice.1 as u32;
            }
        }
    }

    pub fn update(&mut self) {
        self.centers = cluster_means(&self.pixels, &self.labels, self.centers.len(), Some(&self.centers));
    }

    pub fn run(mut self) -> SuperpixelLabeling {
        for _ in 0..self.params.max_iters {
            self.assign();
            self.update();
        }
        let raw = Array2::from_shape_vec((self.height, self.width), self.labels.clone())
            .expect("label vector matches image");
        let labeling = enforce_connectivity(&raw);
        let flat: Vec<u32> = labeling.labels.iter().copied().collect();
        let centers = cluster_means(&self.pixels, &flat, labeling.num_regions, None);
        SuperpixelLabeling {
            labeling,
            centers,
            grid_interval: self.step,
        }
    }
}

pub fn slic_segment(features: &FeatureVolume, params: &SlicParams) -> Result<SuperpixelLabeling, SlicError> {
    Ok(SlicEngine::new(features, params)?.run())
}
