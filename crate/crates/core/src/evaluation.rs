//! Saliency-map metrics (F-, E-, S-measure, MAE) and segmentation metrics (BDE, VOI).
//!
//! Saliency maps are `f64` in `[0, 1]`; ground truth is binary. F and E binarize the map
//! at the adaptive threshold `min(2·mean, 1)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Machine epsilon guard used inside the structural and alignment ratios.
pub const EPS: f64 = f64::EPSILON;
/// `β²` of the F-measure.
pub const BETA2: f64 = 0.3;
/// Object/region balance of the S-measure.
pub const S_ALPHA: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction is {pred:?} but ground truth is {gt:?}")]
    DimensionMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("labeling has a single region and therefore no boundary")]
    EmptyBoundary,
}

fn check(pred: (usize, usize), gt: (usize, usize)) -> Result<(), EvalError> {
    if pred != gt {
        return Err(EvalError::DimensionMismatch { pred, gt });
    }
    Ok(())
}

pub fn adaptive_threshold(pred: &Array2<f64>) -> f64 {
    (2.0 * pred.mean().unwrap_or(0.0)).min(1.0)
}

/// `pred ≥ threshold`, except that an all-zero map has no foreground at all.
pub fn binarize(pred: &Array2<f64>) -> Array2<bool> {
    let thr = adaptive_threshold(pred);
    if thr <= 0.0 {
        return pred.mapv(|p| p > 0.0);
    }
    pred.mapv(|p| p >= thr)
}

pub fn f_measure(pred: &Array2<f64>, gt: &Array2<bool>) -> Result<f64, EvalError> {
    check(pred.dim(), gt.dim())?;
    let (mut tp, mut predicted, mut positive) = (0usize, 0usize, 0usize);
    for (&b, &g) in binarize(pred).iter().zip(gt.iter()) {
        tp += (b && g) as usize;
        predicted += b as usize;
        positive += g as usize;
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / predicted as f64;
    let recall = tp as f64 / positive as f64;
    Ok((1.0 + BETA2) * precision * recall / (BETA2 * precision + recall))
}

pub fn mae(pred: &Array2<f64>, gt: &Array2<bool>) -> Result<f64, EvalError> {
    check(pred.dim(), gt.dim())?;
    let n = pred.len().max(1) as f64;
    Ok(pred
        .iter()
        .zip(gt.iter())
        .map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs())
        .sum::<f64>()
        / n)
}

/// Enhanced-alignment measure at the adaptive threshold, averaged over all pixels.
pub fn e_measure(pred: &Array2<f64>, gt: &Array2<bool>) -> Result<f64, EvalError> {
    check(pred.dim(), gt.dim())?;
    let n = pred.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (mut fg_fg, mut fg_bg, mut gt_fg) = (0usize, 0usize, 0usize);
    for (&b, &g) in binarize(pred).iter().zip(gt.iter()) {
        fg_fg += (b && g) as usize;
        fg_bg += (b && !g) as usize;
        gt_fg += g as usize;
    }
    let pred_fg = fg_fg + fg_bg;
    let pred_bg = n - pred_fg;
    let sum = if gt_fg == 0 {
        pred_bg as f64
    } else if gt_fg == n {
        pred_fg as f64
    } else {
        let bg_fg = gt_fg - fg_fg;
        let bg_bg = pred_bg - bg_fg;
        let mean_pred = pred_fg as f64 / n as f64;
        let mean_gt = gt_fg as f64 / n as f64;
        let (pf, pb) = (1.0 - mean_pred, -mean_pred);
        let (gf, gb) = (1.0 - mean_gt, -mean_gt);
        [(fg_fg, pf, gf), (fg_bg, pf, gb), (bg_fg, pb, gf), (bg_bg, pb, gb)]
            .iter()
            .map(|&(count, a, b)| {
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                count as f64 * (align + 1.0).powi(2) / 4.0
            })
            .sum()
    };
    Ok(sum / n as f64)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let n = values.clone().count();
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std, n)
}

fn s_object(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (x, sigma, _) = mean_std(values);
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

/// SSIM-style score of one quadrant; empty quadrants score 0.
fn quadrant_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let x = pred.iter().sum::<f64>() / nf;
    let y = gt.iter().sum::<f64>() / nf;
    let denom = if n > 1 { nf - 1.0 } else { 1.0 };
    let sx = pred.iter().map(|p| (p - x).powi(2)).sum::<f64>() / denom;
    let sy = gt.iter().map(|g| (g - y).powi(2)).sum::<f64>() / denom;
    let sxy = pred.iter().zip(gt).map(|(p, g)| (p - x) * (g - y)).sum::<f64>() / denom;
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Round half to even, as numpy does.
fn round_half_even(v: f64) -> f64 {
    let r = v.round();
    if (v - v.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - v.signum()
    } else {
        r
    }
}

/// 1-based split point `(x, y)` at the foreground centroid.
fn centroid(gt: &Array2<bool>) -> (usize, usize) {
    let (h, w) = gt.dim();
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
    for ((r, c), &g) in gt.indexed_iter() {
        if g {
            sr += r as f64;
            sc += c as f64;
            n += 1;
        }
    }
    if n == 0 {
        return (round_half_even(w as f64 / 2.0) as usize + 1, round_half_even(h as f64 / 2.0) as usize + 1);
    }
    (
        round_half_even(sc / n as f64) as usize + 1,
        round_half_even(sr / n as f64) as usize + 1,
    )
}

/// Structure measure `α·S_object + (1−α)·S_region`, with the usual closed forms for
/// all-background and all-foreground ground truth.
pub fn s_measure(pred: &Array2<f64>, gt: &Array2<bool>) -> Result<f64, EvalError> {
    check(pred.dim(), gt.dim())?;
    let n = pred.len();
    if n == 0 {
        return Ok(0.0);
    }
    let fg = gt.iter().filter(|&&g| g).count();
    let mean_pred = pred.mean().unwrap_or(0.0);
    if fg == 0 {
        return Ok(1.0 - mean_pred);
    }
    if fg == n {
        return Ok(mean_pred);
    }
    let u = fg as f64 / n as f64;
    let pairs = || pred.iter().zip(gt.iter());
    let object = u * s_object(pairs().filter(|(_, &g)| g).map(|(&p, _)| p))
        + (1.0 - u) * s_object(pairs().filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p));

    let (h, w) = gt.dim();
    let (x, y) = centroid(gt);
    let (x, y) = (x.min(w), y.min(h));
    let area = (h * w) as f64;
    let weights = [
        (x * y) as f64 / area,
        (y * (w - x)) as f64 / area,
        ((h - y) * x) as f64 / area,
    ];
    let weights = [weights[0], weights[1], weights[2], 1.0 - weights[0] - weights[1] - weights[2]];
    let bounds = [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)];
    let region: f64 = bounds
        .iter()
        .zip(weights)
        .map(|(&(r0, r1, c0, c1), wt)| {
            let mut p = Vec::new();
            let mut g = Vec::new();
            for r in r0..r1 {
                for c in c0..c1 {
                    p.push(pred[[r, c]]);
                    g.push(if gt[[r, c]] { 1.0 } else { 0.0 });
                }
            }
            wt * quadrant_ssim(&p, &g)
        })
        .sum();
    Ok((S_ALPHA * object + (1.0 - S_ALPHA) * region).max(0.0))
}

/// Pixels whose right or lower neighbor carries a different label.
pub fn boundary_map<T: PartialEq>(labels: &Array2<T>) -> Array2<bool> {
    let (h, w) = labels.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        (c + 1 < w && labels[[r, c + 1]] != labels[[r, c]]) || (r + 1 < h && labels[[r + 1, c]] != labels[[r, c]])
    })
}

/// Stand-in for "no site"; far above any squared in-image distance.
const FAR: f64 = 1e20;

/// 1-D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let parab = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
    };
    for q in 1..n {
        let mut s = parab(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parab(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Euclidean distance from every pixel to the nearest `true` pixel of `sites`.
pub fn distance_transform(sites: &Array2<bool>) -> Array2<f64> {
    let (h, w) = sites.dim();
    let mut tmp = Array2::from_elem((h, w), FAR);
    let mut col = vec![0.0; h];
    let mut out_col = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            col[r] = if sites[[r, c]] { 0.0 } else { FAR };
        }
        edt_1d(&col, &mut out_col);
        for r in 0..h {
            tmp[[r, c]] = out_col[r];
        }
    }
    let mut out = Array2::zeros((h, w));
    let mut row = vec![0.0; w];
    let mut out_row = vec![0.0; w];
    for r in 0..h {
        for c in 0..w {
            row[c] = tmp[[r, c]];
        }
        edt_1d(&row, &mut out_row);
        for c in 0..w {
            out[[r, c]] = out_row[c].sqrt();
        }
    }
    out
}

/// Boundary displacement error: mean nearest-boundary distance from each labeling's
/// boundary pixels to the other's, averaged over both directions.
pub fn bde(seg: &Array2<u32>, gt_seg: &Array2<u32>) -> Result<f64, EvalError> {
    if seg.dim() != gt_seg.dim() {
        return Err(EvalError::DimensionMismatch {
            pred: seg.dim(),
            gt: gt_seg.dim(),
        });
    }
    let (a, b) = (boundary_map(seg), boundary_map(gt_seg));
    if !a.iter().any(|&v| v) || !b.iter().any(|&v| v) {
        return Err(EvalError::EmptyBoundary);
    }
    let directed = |from: &Array2<bool>, to: &Array2<bool>| {
        let dt = distance_transform(to);
        let (sum, n) = from
            .iter()
            .zip(dt.iter())
            .filter(|(&f, _)| f)
            .fold((0.0, 0usize), |(s, n), (_, &d)| (s + d, n + 1));
        sum / n as f64
    };
    Ok(0.5 * (directed(&a, &b) + directed(&b, &a)))
}

fn entropy<K: std::hash::Hash + Eq>(counts: &HashMap<K, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Variation of information `H(S|G) + H(G|S)` in nats.
pub fn voi(seg: &Array2<u32>, gt_seg: &Array2<u32>) -> Result<f64, EvalError> {
    if seg.dim() != gt_seg.dim() {
        return Err(EvalError::DimensionMismatch {
            pred: seg.dim(),
            gt: gt_seg.dim(),
        });
    }
    let n = seg.len() as f64;
    let mut joint = HashMap::new();
    let mut hs = HashMap::new();
    let mut hg = HashMap::new();
    for (&s, &g) in seg.iter().zip(gt_seg.iter()) {
        *joint.entry((s, g)).or_insert(0) += 1;
        *hs.entry(s).or_insert(0) += 1;
        *hg.entry(g).or_insert(0) += 1;
    }
    Ok((2.0 * entropy(&joint, n) - entropy(&hs, n) - entropy(&hg, n)).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMetrics {
    pub f_measure: f64,
    pub e_measure: f64,
    pub s_measure: f64,
    pub mae: f64,
}

pub fn saliency_metrics(pred: &Array2<f64>, gt: &Array2<bool>) -> Result<SaliencyMetrics, EvalError> {
    Ok(SaliencyMetrics {
        f_measure: f_measure(pred, gt)?,
        e_measure: e_measure(pred, gt)?,
        s_measure: s_measure(pred, gt)?,
        mae: mae(pred, gt)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    #[serde(flatten)]
    pub metrics: SaliencyMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// How F and E binarize the map.
    pub threshold: String,
    pub images: Vec<ImageMetrics>,
    pub mean: Option<SaliencyMetrics>,
}

impl MetricReport {
    pub fn new(images: Vec<ImageMetrics>) -> Self {
        let mean = (!images.is_empty()).then(|| {
            let n = images.len() as f64;
            let sum = |f: fn(&SaliencyMetrics) -> f64| images.iter().map(|i| f(&i.metrics)).sum::<f64>() / n;
            SaliencyMetrics {
                f_measure: sum(|m| m.f_measure),
                e_measure: sum(|m| m.e_measure),
                s_measure: sum(|m| m.s_measure),
                mae: sum(|m| m.mae),
            }
        });
        Self {
            threshold: "adaptive: min(2 * mean(pred), 1)".into(),
            images,
            mean,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,F,E,S,MAE\n");
        let row = |out: &mut String, id: &str, m: &SaliencyMetrics| {
            let _ = writeln!(
                out,
                "{id},{:.6},{:.6},{:.6},{:.6}",
                m.f_measure, m.e_measure, m.s_measure, m.mae
            );
        };
        for i in &self.images {
            row(&mut out, &i.id, &i.metrics);
        }
        if let Some(m) = &self.mean {
            row(&mut out, "mean", m);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
