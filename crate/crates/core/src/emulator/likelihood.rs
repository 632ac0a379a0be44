//! Unique-design log-likelihood of replicated data and its gradients.

use nalgebra::{DMatrix, DVector};

use super::kernel::{correlation_matrix, matern52_dlog_factor, scale_rows, sq_dist};
use super::linalg::{factor_with_jitter, Factor};
use crate::error::Result;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Replicate summaries as seen by the likelihood.
pub(crate) struct Summaries<'a> {
    pub x: &'a [Vec<f64>],
    pub a: &'a [u32],
    pub ybar: &'a [f64],
    pub s2: &'a [f64],
}

impl Summaries<'_> {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn total(&self) -> f64 {
        self.a.iter().map(|&a| f64::from(a)).sum()
    }
}

pub(crate) struct MainEval {
    pub loglik: f64,
    pub mu0: f64,
    pub factor: Factor,
    pub alpha: DVector<f64>,
    /// d/dlog l_k
    pub grad_log_l: Vec<f64>,
    pub grad_log_nu: f64,
    /// d/dlambda_i
    pub grad_lambda: Vec<f64>,
}

/// Lengthscale-scaled inputs and their correlation matrix.
pub(crate) struct KernelCache {
    pub scaled: Vec<f64>,
    pub k: DMatrix<f64>,
}

impl KernelCache {
    pub fn new(x: &[Vec<f64>], lengthscales: &[f64]) -> Self {
        let scaled = scale_rows(x, lengthscales);
        let k = correlation_matrix(&scaled, lengthscales.len());
        KernelCache { scaled, k }
    }

    /// Returns `sum_ij w_ij dK_ij/dlog l_k` for every `k`, where `w` is symmetric.
    pub fn contract_dlog(&self, w: &DMatrix<f64>, d: usize) -> Vec<f64> {
        let n = self.k.nrows();
        let mut out = vec![0.0; d];
        for i in 0..n {
            let xi = &self.scaled[i * d..(i + 1) * d];
            for j in 0..i {
                let xj = &self.scaled[j * d..(j + 1) * d];
                let r = sq_dist(xi, xj).sqrt();
                let f = 2.0 * w[(i, j)] * matern52_dlog_factor(r);
                for k in 0..d {
                    let diff = xi[k] - xj[k];
                    out[k] += f * diff * diff;
                }
            }
        }
        out
    }

    /// Returns `u^T dK_k v` for every `k`.
    pub fn bilinear_dlog(&self, u: &[f64], v: &[f64], d: usize) -> Vec<f64> {
        let n = self.k.nrows();
        let mut out = vec![0.0; d];
        for i in 0..n {
            let xi = &self.scaled[i * d..(i + 1) * d];
            for j in 0..i {
                let xj = &self.scaled[j * d..(j + 1) * d];
                let r = sq_dist(xi, xj).sqrt();
                let f = (u[i] * v[j] + u[j] * v[i]) * matern52_dlog_factor(r);
                for k in 0..d {
                    let diff = xi[k] - xj[k];
                    out[k] += f * diff * diff;
                }
            }
        }
        out
    }
}

/// Generalized least-squares constant trend under covariance factor `f`.
pub(crate) fn gls_mean(f: &Factor, y: &[f64]) -> f64 {
    let n = y.len();
    let ones = DVector::from_element(n, 1.0);
    let c1 = f.solve(&ones);
    let denom = c1.sum();
    let num = c1.dot(&DVector::from_row_slice(y));
    num / denom
}

pub(crate) fn build_c(k: &DMatrix<f64>, nu: f64, lambda: &[f64], a: &[u32]) -> DMatrix<f64> {
    let mut c = k * nu;
    for i in 0..lambda.len() {
        c[(i, i)] += lambda[i] / f64::from(a[i]);
    }
    c
}

/// Full-N log-likelihood via the unique-design decomposition. `mu0 = None`
/// plugs in the generalized least-squares trend.
#[cfg(test)]
pub(crate) fn main_loglik(
    s: &Summaries<'_>,
    lengthscales: &[f64],
    nu: f64,
    lambda: &[f64],
    mu0: Option<f64>,
    gradient: bool,
) -> Result<MainEval> {
    let cache = KernelCache::new(s.x, lengthscales);
    main_loglik_cached(s, &cache, lengthscales.len(), nu, lambda, mu0, gradient)
}

pub(crate) fn main_loglik_cached(
    s: &Summaries<'_>,
    cache: &KernelCache,
    d: usize,
    nu: f64,
    lambda: &[f64],
    mu0: Option<f64>,
    gradient: bool,
) -> Result<MainEval> {
    let n = s.n();
    let c = build_c(&cache.k, nu, lambda, s.a);
    let factor = factor_with_jitter(&c, nu)?;
    let mu0 = mu0.unwrap_or_else(|| gls_mean(&factor, s.ybar));
    let r = DVector::from_iterator(n, s.ybar.iter().map(|y| y - mu0));
    let alpha = factor.solve(&r);
    let mut ll = -0.5 * r.dot(&alpha) - 0.5 * factor.logdet - 0.5 * s.total() * LN_2PI;
    for i in 0..n {
        let a = f64::from(s.a[i]);
        ll -= 0.5 * ((a - 1.0) * (s.s2[i] / lambda[i] + lambda[i].ln()) + a.ln());
    }

    let (mut grad_log_l, mut grad_log_nu, mut grad_lambda) = (Vec::new(), 0.0, Vec::new());
    if gradient {
        let cinv = factor.inverse();
        let mut q = &alpha * alpha.transpose();
        q -= &cinv;
        grad_log_nu = 0.5 * nu * q.component_mul(&cache.k).sum();
        grad_log_l = cache
            .contract_dlog(&q, d)
            .into_iter()
            .map(|g| 0.5 * nu * g)
            .collect();
        grad_lambda = (0..n)
            .map(|i| {
                let a = f64::from(s.a[i]);
                let l = lambda[i];
                0.5 * q[(i, i)] / a + 0.5 * (a - 1.0) * (s.s2[i] / (l * l) - 1.0 / l)
            })
            .collect();
    }
    Ok(MainEval {
        loglik: ll,
        mu0,
        factor,
        alpha,
        grad_log_l,
        grad_log_nu,
        grad_lambda,
    })
}

/// Latent log-noise field smoothed from the per-location values `delta`.
pub(crate) struct LatentEval {
    pub z: Vec<f64>,
    /// Mean of `delta`.
    pub mean: f64,
    /// `M^{-1} (delta - mean)` with `M = K_g + g A^{-1}`.
    pub beta: DVector<f64>,
    pub factor: Factor,
    pub cache: KernelCache,
}

pub(crate) fn latent_field(
    x: &[Vec<f64>],
    a: &[u32],
    lengthscales: &[f64],
    g: f64,
    delta: &[f64],
) -> Result<LatentEval> {
    let n = x.len();
    let cache = KernelCache::new(x, lengthscales);
    let mut m = cache.k.clone();
    for i in 0..n {
        m[(i, i)] += g / f64::from(a[i]);
    }
    let factor = factor_with_jitter(&m, 1.0)?;
    let mean = delta.iter().sum::<f64>() / n as f64;
    let e = DVector::from_iterator(n, delta.iter().map(|v| v - mean));
    let beta = factor.solve(&e);
    let kb = &cache.k * &beta;
    let z = kb.iter().map(|v| mean + v).collect();
    Ok(LatentEval {
        z,
        mean,
        beta,
        factor,
        cache,
    })
}

/// Gaussian-process log-density of `delta` around its mean with correlation
/// `M` scaled by `nu_g` (constants dropped), and its gradient pieces.
pub(crate) struct PenaltyEval {
    pub value: f64,
    pub grad_delta: Vec<f64>,
    pub grad_log_lg: Vec<f64>,
    pub grad_log_g: f64,
}

pub(crate) fn latent_penalty(lat: &LatentEval, a: &[u32], g: f64, nu_g: f64, d: usize) -> PenaltyEval {
    let n = lat.z.len();
    let e_beta: f64 = {
        // e^T M^{-1} e where e = M beta
        let mb = &lat.cache.k * &lat.beta;
        (0..n)
            .map(|i| lat.beta[i] * (mb[i] + g / f64::from(a[i]) * lat.beta[i]))
            .sum()
    };
    let value = -0.5 * e_beta / nu_g - 0.5 * lat.factor.logdet;
    let bmean = lat.beta.sum() / n as f64;
    let grad_delta = lat.beta.iter().map(|b| -(b - bmean) / nu_g).collect();
    let minv = lat.factor.inverse();
    let beta: Vec<f64> = lat.beta.iter().copied().collect();
    let quad = lat.cache.bilinear_dlog(&beta, &beta, d);
    let tr = lat.cache.contract_dlog(&minv, d);
    let grad_log_lg = quad
        .iter()
        .zip(&tr)
        .map(|(q, t)| 0.5 * q / nu_g - 0.5 * t)
        .collect();
    let mut grad_log_g = 0.0;
    for i in 0..n {
        let w = g / f64::from(a[i]);
        grad_log_g += 0.5 * beta[i] * beta[i] * w / nu_g - 0.5 * minv[(i, i)] * w;
    }
    PenaltyEval {
        value,
        grad_delta,
        grad_log_lg,
        grad_log_g,
    }
}

/// Pulls a gradient with respect to the latent values `z` back to `delta`,
/// the smoother lengthscales and log `g`.
pub(crate) struct LatentPullback {
    pub grad_delta: Vec<f64>,
    pub grad_log_lg: Vec<f64>,
    pub grad_log_g: f64,
}

pub(crate) fn latent_pullback(lat: &LatentEval, a: &[u32], g: f64, gz: &[f64], d: usize) -> LatentPullback {
    let n = gz.len();
    let gzv = DVector::from_row_slice(gz);
    // B^T gz = M^{-1} K_g gz
    let bt_gz = lat.factor.solve(&(&lat.cache.k * &gzv));
    let sum_gz: f64 = gz.iter().sum();
    let sum_bt = bt_gz.sum();
    let shift = (sum_gz - sum_bt) / n as f64;
    let grad_delta = bt_gz.iter().map(|v| v + shift).collect();
    // dz = (I - B) dK beta, so grad = ((I - B)^T gz)^T dK beta
    let v: Vec<f64> = (0..n).map(|i| gz[i] - bt_gz[i]).collect();
    let beta: Vec<f64> = lat.beta.iter().copied().collect();
    let grad_log_lg = lat.cache.bilinear_dlog(&v, &beta, d);
    // dz = -B (g A^{-1} beta), so grad = -(B^T gz)^T (g A^{-1} beta)
    let grad_log_g = -(0..n)
        .map(|i| bt_gz[i] * g / f64::from(a[i]) * beta[i])
        .sum::<f64>();
    LatentPullback {
        grad_delta,
        grad_log_lg,
        grad_log_g,
    }
}
