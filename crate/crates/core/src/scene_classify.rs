//! Bag-of-visual-words scene classification: dense normalized gray patches, a k-means
//! codebook, and one-vs-rest ridge regression on the word histograms.

use image::RgbImage;
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::luma;

pub const PATCH: usize = 16;
pub const STRIDE: usize = 8;
pub const DESCRIPTOR_DIM: usize = PATCH * PATCH;
pub const DEFAULT_VOCABULARY: usize = 200;
pub const RIDGE_LAMBDA: f64 = 1e-3;
const KMEANS_MAX_ITERS: usize = 50;
const MODEL_MAGIC: &[u8; 4] = b"VSSM";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("image is {height}x{width}; need at least {PATCH}x2 on each side")]
    ImageTooSmall { height: usize, width: usize },
    #[error("{n} descriptors cannot seed {v} visual words")]
    CorpusTooSmall { n: usize, v: usize },
    #[error("ridge system is not positive definite")]
    SingularGram,
    #[error("need at least two classes with samples: {0}")]
    BadTrainingSet(String),
    #[error("invalid scene model: {0}")]
    InvalidModel(String),
}

/// Zero-mean, unit-norm 16×16 gray patches on a stride-8 grid, one row per patch.
pub fn extract_descriptors(rgb: &RgbImage) -> Result<Array2<f64>, SceneError> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if h < 2 * PATCH || w < 2 * PATCH {
        return Err(SceneError::ImageTooSmall { height: h, width: w });
    }
    let gray = Array2::from_shape_fn((h, w), |(r, c)| luma(rgb.get_pixel(c as u32, r as u32).0) as f64);
    let rows = (h - PATCH) / STRIDE + 1;
    let cols = (w - PATCH) / STRIDE + 1;
    let mut out = Array2::zeros((rows * cols, DESCRIPTOR_DIM));
    for gr in 0..rows {
        for gc in 0..cols {
            let mut d = out.row_mut(gr * cols + gc);
            let (r0, c0) = (gr * STRIDE, gc * STRIDE);
            for r in 0..PATCH {
                for c in 0..PATCH {
                    d[r * PATCH + c] = gray[[r0 + r, c0 + c]];
                }
            }
            let mean = d.mean().unwrap_or(0.0);
            d.mapv_inplace(|v| v - mean);
            let norm = d.dot(&d).sqrt();
            if norm > 1e-9 {
                d.mapv_inplace(|v| v / norm);
            } else {
                d.fill(0.0);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `V × D`.
    pub centroids: Array2<f64>,
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.centroids.nrows()
    }

    /// Nearest centroid, lowest index on ties.
    pub fn nearest(&self, d: ArrayView1<f64>) -> usize {
        nearest(&self.centroids, d).0
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Array2<f64>, d: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.outer_iter().enumerate() {
        let dist = sq_dist(c, d);
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best
}

/// k-means++ seeding then Lloyd iterations; empty clusters keep their centroid. Returns
/// the centroids and the objective after each assignment step.
pub fn kmeans(data: &Array2<f64>, k: usize, seed: u64, max_iters: usize) -> Result<(Array2<f64>, Vec<f64>), SceneError> {
    let n = data.nrows();
    if k == 0 || n < k {
        return Err(SceneError::CorpusTooSmall { n, v: k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Array2::zeros((k, data.ncols()));
    centroids.row_mut(0).assign(&data.row(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = data.outer_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for j in 1..k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(j).assign(&data.row(idx));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centroids.row(j)));
        }
    }

    let mut trace = Vec::new();
    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let next: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&centroids, data.row(i)))
            .collect();
        trace.push(next.iter().map(|x| x.1).sum());
        let changed = next.iter().zip(&assignment).any(|(a, &b)| a.0 != b);
        assignment = next.into_iter().map(|x| x.0).collect();
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            let mut row = sums.row_mut(a);
            row += &data.row(i);
            counts[a] += 1;
        }
        for (j, &count) in counts.iter().enumerate() {
            if count > 0 {
                let mean = sums.row(j).mapv(|v| v / count as f64);
                centroids.row_mut(j).assign(&mean);
            }
        }
    }
    Ok((centroids, trace))
}

pub fn build_codebook(corpus: &Array2<f64>, v: usize, seed: u64) -> Result<Codebook, SceneError> {
    let (centroids, _) = kmeans(corpus, v, seed, KMEANS_MAX_ITERS)?;
    Ok(Codebook { centroids })
}

/// L1-normalized visual-word counts of a descriptor set; uniform when every descriptor is
/// the zero vector.
pub fn histogram_of(descriptors: &Array2<f64>, codebook: &Codebook) -> Vec<f64> {
    let v = codebook.size();
    if descriptors.iter().all(|&x| x == 0.0) {
        return vec![1.0 / v as f64; v];
    }
    let mut hist = vec![0.0; v];
    for d in descriptors.outer_iter() {
        hist[codebook.nearest(d)] += 1.0;
    }
    let total: f64 = hist.iter().sum();
    hist.iter_mut().for_each(|h| *h /= total);
    hist
}

pub fn bovw_histogram(rgb: &RgbImage, codebook: &Codebook) -> Result<Vec<f64>, SceneError> {
    Ok(histogram_of(&extract_descriptors(rgb)?, codebook))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub codebook: Codebook,
    pub classes: Vec<String>,
    /// One row per class: `V` weights followed by the bias.
    pub weights: Array2<f64>,
    pub lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    vocabulary: usize,
    descriptor_dim: usize,
    patch: usize,
    stride: usize,
    lambda: f64,
    classes: Vec<String>,
}

/// One-vs-rest ridge regression with ±1 targets; the bias is not penalized.
pub fn train(
    histograms: &[Vec<f64>],
    labels: &[usize],
    classes: &[String],
    codebook: Codebook,
    lambda: f64,
) -> Result<SceneModel, SceneError> {
    if classes.len() < 2 || histograms.is_empty() || histograms.len() != labels.len() {
        return Err(SceneError::BadTrainingSet(format!(
            "{} classes, {} samples, {} labels",
            classes.len(),
            histograms.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
        return Err(SceneError::BadTrainingSet(format!("label {bad} out of range")));
    }
    let v = codebook.size();
    let n = histograms.len();
    let x = DMatrix::from_fn(n, v + 1, |i, j| if j < v { histograms[i][j] } else { 1.0 });
    let mut gram = x.transpose() * &x;
    for j in 0..v {
        gram[(j, j)] += lambda;
    }
    let chol = gram.cholesky().ok_or(SceneError::SingularGram)?;
    let mut weights = Array2::zeros((classes.len(), v + 1));
    for c in 0..classes.len() {
        let y = DVector::from_fn(n, |i, _| if labels[i] == c { 1.0 } else { -1.0 });
        let w = chol.solve(&(x.transpose() * y));
        if w.iter().any(|v| !v.is_finite()) {
            return Err(SceneError::SingularGram);
        }
        for j in 0..=v {
            weights[[c, j]] = w[j];
        }
    }
    Ok(SceneModel {
        codebook,
        classes: classes.to_vec(),
        weights,
        lambda,
    })
}

/// Builds the codebook from every training image's descriptors, then trains on their
/// histograms. `labels` index into `classes`.
pub fn train_on_images(
    images: &[&RgbImage],
    labels: &[usize],
    classes: &[String],
    vocabulary: usize,
    seed: u64,
) -> Result<SceneModel, SceneError> {
    let descriptors = images
        .par_iter()
        .map(|img| extract_descriptors(img))
        .collect::<Result<Vec<_>, _>>()?;
    let views: Vec<_> = descriptors.iter().map(|d| d.view()).collect();
    let corpus = ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|_| SceneError::BadTrainingSet("no training images".into()))?;
    let codebook = build_codebook(&corpus, vocabulary, seed)?;
    let histograms: Vec<Vec<f64>> = descriptors.par_iter().map(|d| histogram_of(d, &codebook)).collect();
    train(&histograms, labels, classes, codebook, RIDGE_LAMBDA)
}

impl SceneModel {
    pub fn scores(&self, histogram: &[f64]) -> Vec<f64> {
        let v = self.codebook.size();
        self.weights
            .outer_iter()
            .map(|w| w.iter().take(v).zip(histogram).map(|(a, b)| a * b).sum::<f64>() + w[v])
            .collect()
    }

    /// Highest-scoring class index, lowest index on ties.
    pub fn predict_histogram(&self, histogram: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, s) in self.scores(histogram).into_iter().enumerate() {
            if s > best.1 {
                best = (i, s);
            }
        }
        best.0
    }

    pub fn predict(&self, rgb: &RgbImage) -> Result<usize, SceneError> {
        Ok(self.predict_histogram(&bovw_histogram(rgb, &self.codebook)?))
    }

    /// `"VSSM"`, `u32` header length, JSON header, then centroids and weights as `f64` LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&ModelHeader {
            version: MODEL_VERSION,
            vocabulary: self.codebook.size(),
            descriptor_dim: self.codebook.centroids.ncols(),
            patch: PATCH,
            stride: STRIDE,
            lambda: self.lambda,
            classes: self.classes.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.codebook.centroids.iter().chain(self.weights.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SceneError> {
        let bad = |m: &str| SceneError::InvalidModel(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
            return Err(bad("missing VSSM magic"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body_start = 8 + hlen;
        let header: ModelHeader = serde_json::from_slice(bytes.get(8..body_start).ok_or_else(|| bad("truncated header"))?)
            .map_err(|e| SceneError::InvalidModel(e.to_string()))?;
        if header.version != MODEL_VERSION {
            return Err(bad("unsupported model version"));
        }
        let (v, d, c) = (header.vocabulary, header.descriptor_dim, header.classes.len());
        let expected = 8 * (v * d + c * (v + 1));
        let body = &bytes[body_start..];
        if body.len() != expected {
            return Err(SceneError::InvalidModel(format!("body has {} bytes, expected {expected}", body.len())));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let centroids = Array2::from_shape_vec((v, d), values[..v * d].to_vec()).expect("sized");
        let weights = Array2::from_shape_vec((c, v + 1), values[v * d..].to_vec()).expect("sized");
        Ok(Self {
            codebook: Codebook { centroids },
            classes: header.classes,
            weights,
            lambda: header.lambda,
        })
    }
}

/// Fraction of correct predictions.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
