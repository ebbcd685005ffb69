//! Agglomerative merging of superpixels over the region adjacency graph.
//!
//! Two adjacent regions merge when both are planar (`κ > k_th`, `c_u > c_th`) and close in
//! texture (`D_T < D_th`) and in the weighted visio-spatial distance (`d_w < δ`). Pairs merge
//! smallest-`d_w` first. An optional second pass then groups regions meeting along
//! depth-continuous convex creases into objects, and coplanar neighbors into one surface.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{plane_normal, region_glcm, FeatureVolume, GlcmFeatures, GlcmParams};
use crate::labeling::Labeling;
use crate::mixture::{
    fit_em, gaussian_merge_divergence, kl_mixture_vmf, FisherGaussianMixture, MixtureError,
};

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("region needs at least 3 points for a curvature estimate, got {0}")]
    DegenerateRegion(usize),
    #[error("labeling is {labels:?} but features are {features:?}")]
    DimensionMismatch {
        labels: (usize, usize),
        features: (usize, usize),
    },
    #[error(transparent)]
    Mixture(#[from] MixtureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeThresholds {
    pub c_th: f64,
    pub k_th: f64,
    pub d_th: f64,
    pub delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Default for MergeThresholds {
    fn default() -> Self {
        Self {
            c_th: 0.05,
            k_th: 5.0,
            d_th: 1.5,
            delta: 0.35,
            beta1: 0.4,
            beta2: 0.6,
            beta3: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeOptions {
    pub thresholds: MergeThresholds,
    /// Mixture components per region.
    pub components: usize,
    pub seed: u64,
    /// Drop the planarity clause so curved regions can merge too.
    pub merge_nonplanar: bool,
    /// Group regions that meet along convex, depth-continuous creases.
    pub group_convex_objects: bool,
    /// Minimum mean crease convexity for grouping.
    pub convexity_threshold: f64,
    /// Neighbor pairs farther apart than this (meters) are treated as occlusion edges.
    pub depth_continuity: f64,
    /// Depth-continuous neighbors whose planes agree within this angle (radians) and
    /// offset (meters) are grouped as one flat surface.
    pub coplanar_angle: f64,
    pub coplanar_offset: f64,
    pub glcm: GlcmParams,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self {
            thresholds: MergeThresholds::default(),
            components: 1,
            seed: 0,
            merge_nonplanar: false,
            group_convex_objects: true,
            convexity_threshold: 0.1,
            depth_continuity: 0.1,
            coplanar_angle: 10f64.to_radians(),
            coplanar_offset: 0.02,
            glcm: GlcmParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    /// `None` when the region has too few valid 3-D points to fit.
    pub mixture: Option<FisherGaussianMixture>,
    pub mean_lab: [f64; 3],
    pub glcm: Option<GlcmFeatures>,
    /// Planarity in `[0, 1]`.
    pub curvature: f64,
    pub pixel_count: usize,
    pub valid_count: usize,
    pub mean_depth: f64,
}

impl RegionModel {
    pub fn concentration(&self) -> f64 {
        self.mixture.as_ref().map_or(0.0, |m| m.concentration())
    }

    pub fn is_fitted(&self) -> bool {
        self.mixture.is_some() && self.glcm.is_some()
    }
}

/// Planarity `1 − 3λ₀/(λ₀+λ₁+λ₂)` from the PCA eigenvalues of `points`; coincident points
/// count as perfectly planar.
pub fn curvature(points: &[Vector3<f64>]) -> Result<f64, RegionError> {
    if points.len() < 3 {
        return Err(RegionError::DegenerateRegion(points.len()));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p - centroid;
        a + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov).eigenvalues.map(|v| v.max(0.0));
    let total = eig.sum();
    if total <= 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - 3.0 * eig.min() / total).clamp(0.0, 1.0))
}

/// Per-component z-scoring of texture vectors; statistics come from one population of
/// regions and stay fixed afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureScaler {
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

impl TextureScaler {
    /// Zero-variance components get unit scale.
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a GlcmFeatures>) -> Self {
        let rows: Vec<[f64; 6]> = features.into_iter().map(|f| f.to_array()).collect();
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; 6];
        for r in &rows {
            for k in 0..6 {
                mean[k] += r[k] / n;
            }
        }
        let mut std = [0.0; 6];
        for r in &rows {
            for k in 0..6 {
                std[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn distance(&self, a: &GlcmFeatures, b: &GlcmFeatures) -> f64 {
        let (a, b) = (a.to_array(), b.to_array());
        (0..6)
            .map(|k| ((a[k] - b[k]) / self.std[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceTerms {
    /// LAB distance scaled by 1/100.
    pub color: f64,
    /// Positional (Gaussian) divergence.
    pub density: f64,
    /// Symmetrized normal-direction (vMF) divergence.
    pub surface_normal: f64,
    pub weighted: f64,
}

/// `d_w = (β₁D_c + β₂D_de + β₃D_SN)/(β₁+β₂+β₃)` between two fitted regions.
pub fn weighted_distance(
    i: &RegionModel,
    j: &RegionModel,
    t: &MergeThresholds,
) -> Result<DistanceTerms, RegionError> {
    let (mi, mj) = match (&i.mixture, &j.mixture) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(RegionError::DegenerateRegion(i.valid_count.min(j.valid_count))),
    };
    let color = (0..3)
        .map(|k| (i.mean_lab[k] - j.mean_lab[k]).powi(2))
        .sum::<f64>()
        .sqrt()
        / 100.0;
    let density = gaussian_merge_divergence(mi, mj)?;
    let surface_normal = 0.5 * (kl_mixture_vmf(mi, mj) + kl_mixture_vmf(mj, mi));
    let weighted =
        (t.beta1 * color + t.beta2 * density + t.beta3 * surface_normal) / (t.beta1 + t.beta2 + t.beta3);
    Ok(DistanceTerms {
        color,
        density,
        surface_normal,
        weighted,
    })
}

/// The four quantities tested by the merge rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeClauses {
    /// `min(κ_i, κ_j)`.
    pub kappa: f64,
    /// `min(c_u,i, c_u,j)`.
    pub curvature: f64,
    pub texture_distance: f64,
    pub weighted_distance: f64,
}

/// The merge rule with strict inequalities throughout.
pub fn similar(c: &MergeClauses, t: &MergeThresholds, merge_nonplanar: bool) -> bool {
    let planar = c.kappa > t.k_th && c.curvature > t.c_th;
    (planar || merge_nonplanar) && c.texture_distance < t.d_th && c.weighted_distance < t.delta
}

/// Fits a region model from the pixels of one region.
pub fn region_model(
    features: &FeatureVolume,
    pixels: &[(usize, usize)],
    options: &MergeOptions,
    seed: u64,
) -> RegionModel {
    let n = pixels.len().max(1) as f64;
    let mut mean_lab = [0.0; 3];
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    for &(r, c) in pixels {
        let lab = features.lab[[r, c]];
        for k in 0..3 {
            mean_lab[k] += lab[k] / n;
        }
        if features.valid[[r, c]] {
            positions.push(features.position[[r, c]]);
            normals.push(features.normal[[r, c]]);
        }
    }
    let mean_depth = if positions.is_empty() {
        0.0
    } else {
        positions.iter().map(|p| p.z).sum::<f64>() / positions.len() as f64
    };
    let mixture = fit_em(&positions, &normals, options.components.max(1), seed).ok();
    RegionModel {
        mixture,
        mean_lab,
        glcm: region_glcm(&features.gray, pixels, &options.glcm).ok(),
        curvature: curvature(&positions).unwrap_or(0.0),
        pixel_count: pixels.len(),
        valid_count: positions.len(),
        mean_depth,
    }
}

/// One accepted merge, as written to the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub step: usize,
    pub kind: MergeKind,
    pub region_a: u32,
    pub region_b: u32,
    pub clauses: Option<MergeClauses>,
    pub terms: Option<DistanceTerms>,
    /// Mean crease convexity, for object grouping.
    pub convexity: Option<f64>,
    pub merged_pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    Similar,
    ConvexObject,
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub labeling: Labeling,
    /// Indexed by the compacted ids of `labeling`.
    pub models: Vec<RegionModel>,
    pub log: Vec<MergeRecord>,
}

impl MergeOutcome {
    pub fn log_csv(&self) -> String {
        merge_log_csv(&self.log)
    }
}

pub fn merge_log_csv(log: &[MergeRecord]) -> String {
    let mut out = String::from(
        "step,kind,region_a,region_b,kappa_min,curvature_min,texture_distance,d_c,d_de,d_sn,d_w,convexity,merged_pixels\n",
    );
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    for r in log {
        let kind = match r.kind {
            MergeKind::Similar => "similar",
            MergeKind::ConvexObject => "convex_object",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            kind,
            r.region_a,
            r.region_b,
            opt(r.clauses.map(|c| c.kappa)),
            opt(r.clauses.map(|c| c.curvature)),
            opt(r.clauses.map(|c| c.texture_distance)),
            opt(r.terms.map(|t| t.color)),
            opt(r.terms.map(|t| t.density)),
            opt(r.terms.map(|t| t.surface_normal)),
            opt(r.terms.map(|t| t.weighted)),
            opt(r.convexity),
            r.merged_pixels
        );
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct EdgeEval {
    clauses: MergeClauses,
    terms: DistanceTerms,
    similar: bool,
}

fn evaluate_edge(
    a: &RegionModel,
    b: &RegionModel,
    scaler: &TextureScaler,
    options: &MergeOptions,
) -> Option<EdgeEval> {
    let (ga, gb) = (a.glcm.as_ref()?, b.glcm.as_ref()?);
    if a.mixture.is_none() || b.mixture.is_none() {
        return None;
    }
    let terms = weighted_distance(a, b, &options.thresholds).ok()?;
    let clauses = MergeClauses {
        kappa: a.concentration().min(b.concentration()),
        curvature: a.curvature.min(b.curvature),
        texture_distance: scaler.distance(ga, gb),
        weighted_distance: terms.weighted,
    };
    Some(EdgeEval {
        clauses,
        terms,
        similar: similar(&clauses, &options.thresholds, options.merge_nonplanar),
    })
}

fn region_seed(base: u64, id: u32, generation: usize) -> u64 {
    base ^ ((id as u64) << 20) ^ generation as u64
}

/// Merges similar adjacent regions until no pair satisfies the rule, then (optionally)
/// groups convex objects and flat surfaces. Output ids are compacted by first raster appearance.
pub fn merge_regions(
    features: &FeatureVolume,
    labeling: &Labeling,
    options: &MergeOptions,
) -> Result<MergeOutcome, RegionError> {
    if labeling.labels.dim() != features.valid.dim() {
        return Err(RegionError::DimensionMismatch {
            labels: labeling.labels.dim(),
            features: features.valid.dim(),
        });
    }
    let mut pixels: Vec<Vec<(usize, usize)>> = labeling.region_pixels();
    let mut models: Vec<RegionModel> = pixels
        .par_iter()
        .enumerate()
        .map(|(id, px)| region_model(features, px, options, region_seed(options.seed, id as u32, 0)))
        .collect();
    let scaler = TextureScaler::fit(models.iter().filter_map(|m| m.glcm.as_ref()));

    let mut alive: Vec<bool> = vec![true; pixels.len()];
    let mut owner: Vec<u32> = (0..pixels.len() as u32).collect();
    let mut neighbors: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); pixels.len()];
    for (a, b) in labeling.adjacency() {
        neighbors[a as usize].insert(b);
        neighbors[b as usize].insert(a);
    }
    let edges: Vec<(u32, u32)> = labeling.adjacency().into_iter().collect();
    let evals: Vec<Option<EdgeEval>> = edges
        .par_iter()
        .map(|&(a, b)| evaluate_edge(&models[a as usize], &models[b as usize], &scaler, options))
        .collect();
    let mut cache: BTreeMap<(u32, u32), Option<EdgeEval>> = edges.into_iter().zip(evals).collect();

    let mut log = Vec::new();
    let mut generation = 0;
    loop {
        let best = cache
            .iter()
            .filter_map(|(&pair, e)| e.filter(|e| e.similar).map(|e| (pair, e)))
            .min_by(|x, y| {
                x.1.terms
                    .weighted
                    .total_cmp(&y.1.terms.weighted)
                    .then(x.0.cmp(&y.0))
            });
        let Some(((a, b), eval)) = best else { break };
        generation += 1;
        let mut union = pixels[a as usize].clone();
        union.extend_from_slice(&pixels[b as usize]);
        let merged = region_model(features, &union, options, region_seed(options.seed, a, generation));
        if !merged.is_fitted() {
            // keep both pre-merge models; this pair can no longer merge
            cache.insert((a, b), None);
            continue;
        }
        log.push(MergeRecord {
            step: log.len(),
            kind: MergeKind::Similar,
            region_a: a,
            region_b: b,
            clauses: Some(eval.clauses),
            terms: Some(eval.terms),
            convexity: None,
            merged_pixels: union.len(),
        });
        debug_assert_eq!(
            union.len(),
            pixels[a as usize].len() + pixels[b as usize].len()
        );
        pixels[a as usize] = union;
        pixels[b as usize].clear();
        models[a as usize] = merged;
        alive[b as usize] = false;
        owner[b as usize] = a;

        let b_neighbors = std::mem::take(&mut neighbors[b as usize]);
        for n in b_neighbors {
            cache.remove(&(n.min(b), n.max(b)));
            neighbors[n as usize].remove(&b);
            if n != a {
                neighbors[n as usize].insert(a);
                neighbors[a as usize].insert(n);
            }
        }
        neighbors[a as usize].remove(&b);
        let touched: Vec<u32> = neighbors[a as usize].iter().copied().collect();
        let updates: Vec<((u32, u32), Option<EdgeEval>)> = touched
            .par_iter()
            .map(|&n| {
                let pair = (n.min(a), n.max(a));
                let e = evaluate_edge(&models[pair.0 as usize], &models[pair.1 as usize], &scaler, options);
                (pair, e)
            })
            .collect();
        cache.extend(updates);
    }

    let mut group = labeling
        .labels
        .mapv(|l| resolve(&owner, l));
    if options.group_convex_objects {
        let grouped = convex_groups(features, &group, options, log.len());
        for rec in grouped.1 {
            log.push(rec);
        }
        group = grouped.0;
    }

    let final_labeling = Labeling::from_raw(group);
    let mut final_pixels = final_labeling.region_pixels();
    let final_models: Vec<RegionModel> = final_pixels
        .par_iter_mut()
        .enumerate()
        .map(|(id, px)| {
            // reuse the merge-time model when the region was not regrouped afterwards
            let (r, c) = px[0];
            let original = resolve(&owner, labeling.labels[[r, c]]) as usize;
            if alive[original] && pixels[original].len() == px.len() {
                models[original].clone()
            } else {
                region_model(features, px, options, region_seed(options.seed, id as u32, usize::MAX >> 1))
            }
        })
        .collect();
    Ok(MergeOutcome {
        labeling: final_labeling,
        models: final_models,
        log,
    })
}

fn resolve(owner: &[u32], mut l: u32) -> u32 {
    while owner[l as usize] != l {
        l = owner[l as usize];
    }
    l
}

/// Mean convexity `(n_p − n_q)·(p − q)/‖p − q‖` over depth-continuous 4-neighbor pairs
/// straddling each region boundary, keyed by `(low, high)` label pair.
pub fn crease_convexity(
    features: &FeatureVolume,
    labels: &Array2<u32>,
    depth_continuity: f64,
) -> BTreeMap<(u32, u32), (f64, usize)> {
    let (h, w) = labels.dim();
    let mut acc: BTreeMap<(u32, u32), (f64, usize)> = BTreeMap::new();
    for r in 0..h {
        for c in 0..w {
            for (r2, c2) in [(r + 1, c), (r, c + 1)] {
                if r2 >= h || c2 >= w {
                    continue;
                }
                let (a, b) = (labels[[r, c]], labels[[r2, c2]]);
                if a == b || !features.valid[[r, c]] || !features.valid[[r2, c2]] {
                    continue;
                }
                let d = features.position[[r, c]] - features.position[[r2, c2]];
                let dist = d.norm();
                if dist <= 0.0 || dist >= depth_continuity {
                    continue;
                }
                let v = (features.normal[[r, c]] - features.normal[[r2, c2]]).dot(&d) / dist;
                let e = acc.entry((a.min(b), a.max(b))).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    for v in acc.values_mut() {
        v.0 /= v.1 as f64;
    }
    acc
}

/// Least-squares plane of each label's valid points: `(centroid, camera-facing normal)`.
fn region_planes(features: &FeatureVolume, labels: &Array2<u32>, count: usize) -> Vec<Option<(Vector3<f64>, Vector3<f64>)>> {
    let mut points: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); count];
    for (rc, &l) in labels.indexed_iter() {
        if features.valid[rc] {
            points[l as usize].push(features.position[rc]);
        }
    }
    points
        .iter()
        .map(|pts| {
            if pts.len() < 3 {
                return None;
            }
            let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
            let (mut n, _) = plane_normal(pts);
            if n.dot(&centroid) > 0.0 {
                n = -n;
            }
            Some((centroid, n))
        })
        .collect()
}

/// Mean signed offset of `label`'s points from `plane`; positive means in front of it.
fn mean_offset(features: &FeatureVolume, labels: &Array2<u32>, label: u32, plane: (Vector3<f64>, Vector3<f64>)) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (rc, &l) in labels.indexed_iter() {
        if l == label && features.valid[rc] {
            sum += (features.position[rc] - plane.0).dot(&plane.1);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn convex_groups(
    features: &FeatureVolume,
    labels: &Array2<u32>,
    options: &MergeOptions,
    first_step: usize,
) -> (Array2<u32>, Vec<MergeRecord>) {
    let creases = crease_convexity(features, labels, options.depth_continuity);
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    let planes = region_planes(features, labels, max + 1);
    let mut parent: Vec<u32> = (0..=max as u32).collect();
    let mut size = vec![0usize; max + 1];
    for &l in labels.iter() {
        size[l as usize] += 1;
    }
    let mut log = Vec::new();
    for (&(a, b), &(convexity, _)) in &creases {
        let (Some(pa), Some(pb)) = (planes[a as usize], planes[b as usize]) else { continue };
        let (off_b, off_a) = (mean_offset(features, labels, b, pa), mean_offset(features, labels, a, pb));
        let coplanar = pa.1.dot(&pb.1) > options.coplanar_angle.cos()
            && off_a.abs() < options.coplanar_offset
            && off_b.abs() < options.coplanar_offset;
        // a convex pair lies behind each other's plane; an object resting on a surface or
        // a silhouette grazing it does not
        let convex = convexity > options.convexity_threshold && off_a < 0.0 && off_b < 0.0;
        if !(coplanar || convex) {
            continue;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            continue;
        }
        let (keep, gone) = (ra.min(rb), ra.max(rb));
        parent[gone as usize] = keep;
        size[keep as usize] += size[gone as usize];
        log.push(MergeRecord {
            step: first_step + log.len(),
            kind: MergeKind::ConvexObject,
            region_a: a,
            region_b: b,
            clauses: None,
            terms: None,
            convexity: Some(convexity),
            merged_pixels: size[keep as usize],
        });
    }
    (labels.mapv(|l| find(&mut parent, l)), log)
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}
