//! Fisher–Gaussian mixtures: a Gaussian over 3-D position times a von Mises–Fisher
//! density over the unit normal, per component.
//!
//! All vMF normalizers are evaluated in the log domain; concentrations are capped at
//! [`KAPPA_MAX`]. Covariance M-steps clip eigenvalues from below at [`EPS_REG`], which is
//! the exact maximizer over that constraint set and so keeps EM monotone.

use std::f64::consts::{LN_2, PI};

use nalgebra::{Cholesky, Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Covariance eigenvalue floor, m².
pub const EPS_REG: f64 = 1e-6;
/// Upper bound on the vMF concentration.
pub const KAPPA_MAX: f64 = 1e5;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
const LOG_4PI: f64 = 2.531_024_246_969_290_7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("covariance is singular (min eigenvalue {min_eigenvalue:e})")]
    SingularCovariance { min_eigenvalue: f64 },
    #[error("component {component} lost all responsibility mass")]
    EmptyComponent { component: usize },
    #[error("{n} observations cannot support {k} component(s); need at least {}", 4 * k)]
    InsufficientData { n: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherGaussianComponent {
    pub mu: Vector3<f64>,
    pub sigma: Matrix3<f64>,
    pub eta: Vector3<f64>,
    pub kappa: f64,
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherGaussianMixture {
    pub components: Vec<FisherGaussianComponent>,
    pub log_likelihood: f64,
    pub n_obs: usize,
    /// Log-likelihood after each EM iteration of the final run.
    pub trace: Vec<f64>,
}

impl FisherGaussianMixture {
    /// Mixing-weighted concentration, the region's single `κ`.
    pub fn concentration(&self) -> f64 {
        self.components.iter().map(|c| c.pi * c.kappa).sum()
    }

    /// Moment-matched single Gaussian over all components.
    pub fn collapsed_gaussian(&self) -> (Vector3<f64>, Matrix3<f64>) {
        moment_match(self.components.iter().map(|c| (c.pi, c.mu, c.sigma)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mixture serializes")
    }
}

fn min_eigenvalue(sigma: &Matrix3<f64>) -> f64 {
    SymmetricEigen::new(*sigma).eigenvalues.min()
}

fn checked_cholesky(sigma: &Matrix3<f64>) -> Result<Cholesky<f64, nalgebra::U3>, MixtureError> {
    let min = min_eigenvalue(sigma);
    // clipped covariances sit exactly at the floor; allow rounding below it
    if !(min >= EPS_REG * (1.0 - 1e-6)) {
        return Err(MixtureError::SingularCovariance { min_eigenvalue: min });
    }
    Cholesky::new(*sigma).ok_or(MixtureError::SingularCovariance { min_eigenvalue: min })
}

fn log_det(chol: &Cholesky<f64, nalgebra::U3>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn gaussian_log_pdf(
    x: &Vector3<f64>,
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
) -> Result<f64, MixtureError> {
    let chol = checked_cholesky(sigma)?;
    Ok(gaussian_log_pdf_chol(x, mu, &chol))
}

fn gaussian_log_pdf_chol(x: &Vector3<f64>, mu: &Vector3<f64>, chol: &Cholesky<f64, nalgebra::U3>) -> f64 {
    let d = x - mu;
    let maha = d.dot(&chol.solve(&d));
    -0.5 * (3.0 * LOG_2PI + log_det(chol) + maha)
}

/// `log C₃(κ) = log κ − log 4π − log sinh κ`, with the `κ → 0` limit `−log 4π`.
pub fn log_c3(kappa: f64) -> f64 {
    if kappa < 1e-3 {
        let k2 = kappa * kappa;
        -LOG_4PI - k2 / 6.0 + k2 * k2 / 180.0
    } else {
        let log_sinh = kappa + (-(-2.0 * kappa).exp()).ln_1p() - LN_2;
        kappa.ln() - LOG_4PI - log_sinh
    }
}

/// Mean resultant length `A₃(κ) = coth κ − 1/κ`.
pub fn mean_resultant_length(kappa: f64) -> f64 {
    if kappa < 1e-2 {
        let k2 = kappa * kappa;
        kappa / 3.0 - kappa * k2 / 45.0 + 2.0 * kappa * k2 * k2 / 945.0
    } else {
        1.0 / kappa.tanh() - 1.0 / kappa
    }
}

/// Maximum-likelihood concentration for a mean resultant length `r̄`: Banerjee's
/// approximation refined by bracketed Newton steps, clamped to `[0, KAPPA_MAX]`.
pub fn concentration_from_resultant(rbar: f64) -> f64 {
    if !(rbar > 0.0) {
        return 0.0;
    }
    if rbar >= mean_resultant_length(KAPPA_MAX) {
        return KAPPA_MAX;
    }
    let mut kappa = (rbar * (3.0 - rbar * rbar) / (1.0 - rbar * rbar)).clamp(1e-12, KAPPA_MAX);
    let (mut lo, mut hi) = (0.0, KAPPA_MAX);
    for _ in 0..100 {
        let a = mean_resultant_length(kappa);
        let f = a - rbar;
        if f > 0.0 {
            hi = kappa;
        } else {
            lo = kappa;
        }
        let slope = if kappa < 1e-2 { 1.0 / 3.0 } else { 1.0 - a * a - 2.0 * a / kappa };
        let mut next = kappa - f / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - kappa).abs() <= 1e-14 * kappa.max(1.0) {
            kappa = next;
            break;
        }
        kappa = next;
    }
    kappa
}

pub fn vmf_log_pdf(v: &Vector3<f64>, eta: &Vector3<f64>, kappa: f64) -> f64 {
    log_c3(kappa) + kappa * eta.dot(v)
}

/// Draws a unit vector from vMF(`eta`, `kappa`) on S² (Wood's inversion for d = 3).
pub fn sample_vmf<R: Rng + ?Sized>(eta: &Vector3<f64>, kappa: f64, rng: &mut R) -> Vector3<f64> {
    let u: f64 = rng.gen();
    let w = if kappa < 1e-8 {
        2.0 * u - 1.0
    } else {
        (1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa).clamp(-1.0, 1.0)
    };
    let phi = 2.0 * PI * rng.gen::<f64>();
    let helper = if eta.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = eta.cross(&helper).normalize();
    let e2 = eta.cross(&e1);
    let s = (1.0 - w * w).max(0.0).sqrt();
    (eta * w + e1 * (s * phi.cos()) + e2 * (s * phi.sin())).normalize()
}

/// Weighted mean and covariance of a set of Gaussians.
pub fn moment_match(
    parts: impl IntoIterator<Item = (f64, Vector3<f64>, Matrix3<f64>)> + Clone,
) -> (Vector3<f64>, Matrix3<f64>) {
    let total: f64 = parts.clone().into_iter().map(|p| p.0).sum();
    let mu = parts
        .clone()
        .into_iter()
        .fold(Vector3::zeros(), |acc, (w, m, _)| acc + m * (w / total));
    let sigma = parts.into_iter().fold(Matrix3::zeros(), |acc, (w, m, s)| {
        let d = m - mu;
        acc + (s + d * d.transpose()) * (w / total)
    });
    (mu, sigma)
}

/// Closed-form `KL(p ‖ q)` between 3-D Gaussians.
pub fn kl_gaussian(
    p: (&Vector3<f64>, &Matrix3<f64>),
    q: (&Vector3<f64>, &Matrix3<f64>),
) -> Result<f64, MixtureError> {
    let chol_p = checked_cholesky(p.1)?;
    let chol_q = checked_cholesky(q.1)?;
    let trace = chol_q.solve(p.1).trace();
    let d = q.0 - p.0;
    let maha = d.dot(&chol_q.solve(&d));
    let kl = 0.5 * (trace + maha - 3.0 + log_det(&chol_q) - log_det(&chol_p));
    Ok(kl.max(0.0))
}

/// Closed-form `KL(p ‖ q)` between vMF densities on S².
pub fn kl_vmf(p: (&Vector3<f64>, f64), q: (&Vector3<f64>, f64)) -> f64 {
    let (eta_p, kappa_p) = p;
    let (eta_q, kappa_q) = q;
    let kl = log_c3(kappa_p) - log_c3(kappa_q)
        + mean_resultant_length(kappa_p) * (kappa_p - kappa_q * eta_p.dot(eta_q));
    kl.max(0.0)
}

/// Matched-component approximation of the KL between mixtures: each component of `p`
/// pairs with the `q` component minimizing `KL(p_a ‖ q_b) − log w_b`.
pub fn kl_matched<F>(p_weights: &[f64], q_weights: &[f64], mut component_kl: F) -> Result<f64, MixtureError>
where
    F: FnMut(usize, usize) -> Result<f64, MixtureError>,
{
    let mut total = 0.0;
    for (a, &wa) in p_weights.iter().enumerate() {
        if wa <= 0.0 {
            continue;
        }
        let mut best = f64::INFINITY;
        for (b, &wb) in q_weights.iter().enumerate() {
            if wb <= 0.0 {
                continue;
            }
            best = best.min(component_kl(a, b)? + (wa / wb).ln());
        }
        total += wa * best;
    }
    Ok(total.max(0.0))
}

pub fn kl_mixture_gaussian(p: &FisherGaussianMixture, q: &FisherGaussianMixture) -> Result<f64, MixtureError> {
    let pw: Vec<f64> = p.components.iter().map(|c| c.pi).collect();
    let qw: Vec<f64> = q.components.iter().map(|c| c.pi).collect();
    kl_matched(&pw, &qw, |a, b| {
        let (ca, cb) = (&p.components[a], &q.components[b]);
        kl_gaussian((&ca.mu, &ca.sigma), (&cb.mu, &cb.sigma))
    })
}

pub fn kl_mixture_vmf(p: &FisherGaussianMixture, q: &FisherGaussianMixture) -> f64 {
    let pw: Vec<f64> = p.components.iter().map(|c| c.pi).collect();
    let qw: Vec<f64> = q.components.iter().map(|c| c.pi).collect();
    kl_matched(&pw, &qw, |a, b| {
        let (ca, cb) = (&p.components[a], &q.components[b]);
        Ok(kl_vmf((&ca.eta, ca.kappa), (&cb.eta, cb.kappa)))
    })
    .expect("vMF KL is infallible")
}

/// Information lost by describing the union of two regions' positions with one Gaussian:
/// `w_p KL(G_p ‖ G_m) + w_q KL(G_q ‖ G_m)`, where `G_m` is the moment-matched union and the
/// weights are observation shares.
pub fn gaussian_merge_divergence(
    p: &FisherGaussianMixture,
    q: &FisherGaussianMixture,
) -> Result<f64, MixtureError> {
    let gp = p.collapsed_gaussian();
    let gq = q.collapsed_gaussian();
    let total = (p.n_obs + q.n_obs).max(1) as f64;
    let (wp, wq) = (p.n_obs as f64 / total, q.n_obs as f64 / total);
    let gm = moment_match([(wp, gp.0, gp.1), (wq, gq.0, gq.1)]);
    Ok(wp * kl_gaussian((&gp.0, &gp.1), (&gm.0, &gm.1))?
        + wq * kl_gaussian((&gq.0, &gq.1), (&gm.0, &gm.1))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop once the log-likelihood gain falls below this.
    pub tolerance: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tolerance: 1e-6,
        }
    }
}

/// Clips the eigenvalues of a symmetric matrix from below at `floor`.
pub fn clip_eigenvalues(m: &Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let out = eig.eigenvectors * Matrix3::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (out + out.transpose()) * 0.5
}

fn kmeans_pp_seeds(points: &[Vector3<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let n = points.len();
    let mut seeds = vec![points[rng.gen_range(0..n)]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - seeds[0]).norm_squared()).collect();
    while seeds.len() < k {
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
        let s = points[idx];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - s).norm_squared());
        }
        seeds.push(s);
    }
    seeds
}

fn m_step(
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    resp: &[Vec<f64>],
) -> Result<Vec<FisherGaussianComponent>, MixtureError> {
    let n = positions.len() as f64;
    let k = resp[0].len();
    let mut comps = Vec::with_capacity(k);
    for c in 0..k {
        let weight: f64 = resp.iter().map(|r| r[c]).sum();
        if weight < 1e-8 {
            return Err(MixtureError::EmptyComponent { component: c });
        }
        let mu = positions
            .iter()
            .zip(resp)
            .fold(Vector3::zeros(), |acc, (x, r)| acc + x * r[c])
            / weight;
        let scatter = positions.iter().zip(resp).fold(Matrix3::zeros(), |acc, (x, r)| {
            let d = x - mu;
            acc + d * d.transpose() * r[c]
        }) / weight;
        let resultant = normals
            .iter()
            .zip(resp)
            .fold(Vector3::zeros(), |acc, (v, r)| acc + v * r[c]);
        let norm = resultant.norm();
        let (eta, kappa) = if norm > 0.0 {
            (resultant / norm, concentration_from_resultant((norm / weight).min(1.0)))
        } else {
            (Vector3::z(), 0.0)
        };
        comps.push(FisherGaussianComponent {
            mu,
            sigma: clip_eigenvalues(&scatter, EPS_REG),
            eta,
            kappa,
            pi: weight / n,
        });
    }
    Ok(comps)
}

/// Responsibilities and total log-likelihood under `comps`.
fn e_step(
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    comps: &[FisherGaussianComponent],
) -> Result<(Vec<Vec<f64>>, f64), MixtureError> {
    let chols = comps
        .iter()
        .map(|c| checked_cholesky(&c.sigma))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    let resp = positions
        .iter()
        .zip(normals)
        .map(|(x, v)| {
            let logs: Vec<f64> = comps
                .iter()
                .zip(&chols)
                .map(|(c, chol)| {
                    c.pi.ln() + gaussian_log_pdf_chol(x, &c.mu, chol) + vmf_log_pdf(v, &c.eta, c.kappa)
                })
                .collect();
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            total += lse;
            logs.iter().map(|l| (l - lse).exp()).collect()
        })
        .collect();
    Ok((resp, total))
}

/// Log-likelihood of observations under a mixture.
pub fn log_likelihood(
    mixture: &FisherGaussianMixture,
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
) -> Result<f64, MixtureError> {
    Ok(e_step(positions, normals, &mixture.components)?.1)
}

fn fit_once(
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    k: usize,
    seed: u64,
    options: &EmOptions,
) -> Result<FisherGaussianMixture, MixtureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = kmeans_pp_seeds(positions, k, &mut rng);
    let mut resp: Vec<Vec<f64>> = positions
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (i, s) in seeds.iter().enumerate() {
                let d = (p - s).norm_squared();
                if d < best.0 {
                    best = (d, i);
                }
            }
            let mut r = vec![0.0; k];
            r[best.1] = 1.0;
            r
        })
        .collect();

    let mut trace = Vec::new();
    let mut comps;
    loop {
        comps = m_step(positions, normals, &resp)?;
        let (next_resp, ll) = e_step(positions, normals, &comps)?;
        let gain = trace.last().map(|prev| ll - prev);
        trace.push(ll);
        resp = next_resp;
        if gain.is_some_and(|g| g < options.tolerance) || trace.len() >= options.max_iters {
            break;
        }
    }
    Ok(FisherGaussianMixture {
        components: comps,
        log_likelihood: *trace.last().expect("at least one iteration"),
        n_obs: positions.len(),
        trace,
    })
}

/// EM fit of a `k`-component Fisher–Gaussian mixture, seeded by k-means++ on positions.
/// A component that empties out is dropped and the fit restarted once with `k − 1`.
pub fn fit_em(
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    k: usize,
    seed: u64,
) -> Result<FisherGaussianMixture, MixtureError> {
    fit_em_with(positions, normals, k, seed, &EmOptions::default())
}

pub fn fit_em_with(
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    k: usize,
    seed: u64,
    options: &EmOptions,
) -> Result<FisherGaussianMixture, MixtureError> {
    let n = positions.len();
    if k == 0 || n < 4 * k || normals.len() != n {
        return Err(MixtureError::InsufficientData { n, k });
    }
    match fit_once(positions, normals, k, seed, options) {
        Err(MixtureError::EmptyComponent { .. }) if k > 1 => fit_once(positions, normals, k - 1, seed, options),
        other => other,
    }
}
