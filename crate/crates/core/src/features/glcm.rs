//! Gray-level co-occurrence matrices and Haralick statistics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::FeatureError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlcmParams {
    pub levels: usize,
    /// `(d_row, d_col)` displacements; each is accumulated symmetrically.
    pub offsets: Vec<(isize, isize)>,
}

impl Default for GlcmParams {
    fn default() -> Self {
        Self {
            levels: 16,
            offsets: vec![(0, 1), (1, 0), (1, 1), (1, -1)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlcmFeatures {
    pub correlation: f64,
    pub energy: f64,
    /// Haralick's first information measure of correlation.
    pub info_measure_correlation: f64,
    pub homogeneity: f64,
    pub dissimilarity: f64,
    pub entropy: f64,
}

impl GlcmFeatures {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.correlation,
            self.energy,
            self.info_measure_correlation,
            self.homogeneity,
            self.dissimilarity,
            self.entropy,
        ]
    }
}

/// Normalized symmetric co-occurrence matrix of `gray` quantized to `levels`. When a mask
/// is given, only pairs with both pixels inside the mask count.
pub fn cooccurrence(
    gray: &Array2<u8>,
    mask: Option<&Array2<bool>>,
    params: &GlcmParams,
) -> Result<Array2<f64>, FeatureError> {
    let (h, w) = gray.dim();
    if h < 2 || w < 2 {
        return Err(FeatureError::DegenerateWindow);
    }
    if params.levels < 2 || params.levels > 256 {
        return Err(FeatureError::InvalidParams(format!(
            "GLCM levels must be in [2, 256], got {}",
            params.levels
        )));
    }
    if mask.is_some_and(|m| m.dim() != gray.dim()) {
        return Err(FeatureError::InvalidParams("GLCM mask size differs from window".into()));
    }
    let levels = params.levels;
    let quant = gray.mapv(|v| v as usize * levels / 256);
    let inside = |r: usize, c: usize| mask.map_or(true, |m| m[[r, c]]);

    let mut counts = Array2::<f64>::zeros((levels, levels));
    let mut total = 0.0;
    for &(dr, dc) in &params.offsets {
        for r in 0..h {
            let r2 = r as isize + dr;
            if r2 < 0 || r2 >= h as isize {
                continue;
            }
            for c in 0..w {
                let c2 = c as isize + dc;
                if c2 < 0 || c2 >= w as isize {
                    continue;
                }
                let (r2, c2) = (r2 as usize, c2 as usize);
                if !inside(r, c) || !inside(r2, c2) {
                    continue;
                }
                let (a, b) = (quant[[r, c]], quant[[r2, c2]]);
                counts[[a, b]] += 1.0;
                counts[[b, a]] += 1.0;
                total += 2.0;
            }
        }
    }
    if total == 0.0 {
        return Err(FeatureError::DegenerateWindow);
    }
    counts.mapv_inplace(|v| v / total);
    Ok(counts)
}

/// The six statistics of a normalized co-occurrence matrix.
pub fn haralick(p: &Array2<f64>) -> GlcmFeatures {
    let n = p.nrows();
    let px: Vec<f64> = (0..n).map(|i| p.row(i).sum()).collect();
    let py: Vec<f64> = (0..n).map(|j| p.column(j).sum()).collect();
    let mean = |m: &[f64]| m.iter().enumerate().map(|(i, v)| i as f64 * v).sum::<f64>();
    let (mx, my) = (mean(&px), mean(&py));
    let var = |m: &[f64], mu: f64| {
        m.iter()
            .enumerate()
            .map(|(i, v)| (i as f64 - mu).powi(2) * v)
            .sum::<f64>()
    };
    let (vx, vy) = (var(&px, mx), var(&py, my));
    let plogp = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };

    let mut energy = 0.0;
    let mut homogeneity = 0.0;
    let mut dissimilarity = 0.0;
    let mut entropy = 0.0;
    let mut cross = 0.0;
    let mut hxy1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = p[[i, j]];
            if v == 0.0 {
                continue;
            }
            let diff = (i as f64 - j as f64).abs();
            energy += v * v;
            homogeneity += v / (1.0 + diff);
            dissimilarity += diff * v;
            entropy -= v * v.ln();
            cross += (i as f64 - mx) * (j as f64 - my) * v;
            hxy1 -= v * (px[i] * py[j]).ln();
        }
    }
    let hx = -px.iter().map(|&v| plogp(v)).sum::<f64>();
    let hy = -py.iter().map(|&v| plogp(v)).sum::<f64>();

    const VAR_EPS: f64 = 1e-15;
    let degenerate = vx < VAR_EPS || vy < VAR_EPS;
    let correlation = if degenerate { 0.0 } else { cross / (vx * vy).sqrt() };
    let info_measure_correlation = if degenerate || hx.max(hy) <= 0.0 {
        0.0
    } else {
        (entropy - hxy1) / hx.max(hy)
    };
    GlcmFeatures {
        correlation,
        energy,
        info_measure_correlation,
        homogeneity,
        dissimilarity,
        entropy,
    }
}

pub fn glcm_features(
    gray: &Array2<u8>,
    mask: Option<&Array2<bool>>,
    params: &GlcmParams,
) -> Result<GlcmFeatures, FeatureError> {
    Ok(haralick(&cooccurrence(gray, mask, params)?))
}

/// GLCM statistics of a pixel set, computed over its bounding box with the set as mask.
pub fn region_glcm(
    gray: &Array2<u8>,
    pixels: &[(usize, usize)],
    params: &GlcmParams,
) -> Result<GlcmFeatures, FeatureError> {
    if pixels.is_empty() {
        return Err(FeatureError::DegenerateWindow);
    }
    let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
    for &(r, c) in pixels {
        r0 = r0.min(r);
        c0 = c0.min(c);
        r1 = r1.max(r);
        c1 = c1.max(c);
    }
    // pad single-row/column boxes to the minimum window
    let r1 = r1.max(r0 + 1).min(gray.nrows() - 1);
    let c1 = c1.max(c0 + 1).min(gray.ncols() - 1);
    let r0 = r0.min(r1.saturating_sub(1));
    let c0 = c0.min(c1.saturating_sub(1));
    let window = gray.slice(ndarray::s![r0..=r1, c0..=c1]).to_owned();
    let mut mask = Array2::from_elem(window.dim(), false);
    for &(r, c) in pixels {
        mask[[r - r0, c - c0]] = true;
    }
    glcm_features(&window, Some(&mask), params)
}
