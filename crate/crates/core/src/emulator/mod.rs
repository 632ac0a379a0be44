//! Heteroskedastic Gaussian-process emulation of replicated simulator output.
//!
//! Fitting works on the unique design locations only: the likelihood of all
//! `N` runs is evaluated with `n x n` factorizations of
//! `C = nu K(X, X) + diag(lambda_i / a_i)`. The per-location noise variances
//! `lambda` come from a latent log-variance field smoothed by a second
//! Gaussian process, which also predicts the noise at new inputs.
//!
//! Outputs are standardized before fitting; every public quantity is in the
//! original output units.

mod data;
mod kernel;
mod likelihood;
mod linalg;
mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use data::ReplicateData;
pub use kernel::matern52;

use kernel::{cross_correlation, scale_rows};
use likelihood::{latent_field, latent_penalty, latent_pullback, main_loglik_cached, KernelCache, Summaries};
use linalg::forward_sq_norm;
use optim::{maximize, Bounded};

use crate::design::lhs_maximin;
use crate::error::{Error, Result};

/// Noise floor relative to the variance of the standardized means.
pub const NOISE_FLOOR: f64 = 1e-6;
const ARCHIVE_FORMAT: &str = "histmatch-emulator";
const ARCHIVE_VERSION: u32 = 1;

fn lengthscale_bounds() -> Bounded {
    Bounded::new(0.05f64.ln(), 10f64.ln())
}

fn nu_bounds() -> Bounded {
    Bounded::new(1e-6f64.ln(), 1e6f64.ln())
}

fn nugget_bounds() -> Bounded {
    Bounded::new(1e-4f64.ln(), 1e2f64.ln())
}

fn homoskedastic_bounds() -> Bounded {
    Bounded::new(1e-8f64.ln(), 1e2f64.ln())
}

/// How the noise variances are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Latent log-noise values optimized together with the kernel.
    #[default]
    Joint,
    /// Log sample variances smoothed first, kernel fitted with the noise held fixed.
    Staged,
    /// One noise variance shared by all inputs.
    Homoskedastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    #[serde(default)]
    pub mode: FitMode,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_starts() -> usize {
    5
}

fn default_max_iters() -> u64 {
    150
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: FitMode::Joint,
            starts: default_starts(),
            max_iters: default_max_iters(),
            seed: 0,
        }
    }
}

/// Noise model in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseField {
    /// `lambda(x) = floor + lambda`.
    Constant { lambda: f64 },
    /// `lambda(x) = floor + exp(z(x))` where `z` smooths the latent values
    /// `delta` with correlation lengthscales `lengthscales` and nugget `g / a_i`.
    Latent {
        lengthscales: Vec<f64>,
        g: f64,
        delta: Vec<f64>,
    },
}

/// Everything needed to rebuild a fitted emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mode: FitMode,
    pub data: ReplicateData,
    /// Outputs are standardized as `(y - center) / scale`.
    pub center: f64,
    pub scale: f64,
    /// Noise floor, standardized.
    pub floor: f64,
    pub lengthscales: Vec<f64>,
    /// Process variance, standardized.
    pub nu: f64,
    /// Constant trend, standardized.
    pub mu0: f64,
    pub noise: NoiseField,
    /// Constant data: the model predicts `center` with floor noise everywhere.
    pub degenerate: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Archive {
    format: String,
    version: u32,
    model: ModelParams,
}

enum NoiseCache {
    Constant(f64),
    Latent {
        lengthscales: Vec<f64>,
        scaled: Vec<f64>,
        beta: Vec<f64>,
        mean: f64,
    },
}

struct Cache {
    scaled: Vec<f64>,
    lower: Vec<f64>,
    alpha: Vec<f64>,
    noise: NoiseCache,
    lambda: Vec<f64>,
    loglik: f64,
    loo_rmse: f64,
    jitter: f64,
}

/// A fitted emulator. Immutable; prediction is safe to call concurrently.
pub struct EmulatorModel {
    params: ModelParams,
    cache: Option<Cache>,
}

impl std::fmt::Debug for EmulatorModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmulatorModel").field("params", &self.params).finish()
    }
}

/// Predictions at a batch of inputs, in output units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub var_mean: Vec<f64>,
    pub var_noise: Vec<f64>,
}

/// Scratch space for allocation-free single-point prediction.
#[derive(Debug, Clone)]
pub struct Workspace {
    xs: Vec<f64>,
    k: Vec<f64>,
    work: Vec<f64>,
}

/// Summary of a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Full-data log-likelihood in output units.
    pub loglik: f64,
    /// Leave-one-location-out root mean squared error of the location means.
    pub loo_rmse: f64,
    /// Diagonal jitter added to `C`, standardized.
    pub jitter: f64,
    pub degenerate: bool,
}

fn check_fit_preconditions(data: &ReplicateData) -> Result<()> {
    let (n, d) = (data.n(), data.dim());
    if n < d + 2 {
        return Err(Error::InsufficientData(format!(
            "{n} unique locations in {d} dimensions; need at least {}",
            d + 2
        )));
    }
    if data.replicates().iter().all(|&a| a < 2) {
        return Err(Error::InsufficientData(
            "at least one location needs two or more replicates".into(),
        ));
    }
    for row in data.x() {
        if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("design locations must lie in the unit cube".into()));
        }
    }
    Ok(())
}

fn standardization(data: &ReplicateData) -> (f64, f64) {
    let y = data.ybar();
    let n = y.len() as f64;
    let center = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - center).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd > 0.0 {
        return (center, sd);
    }
    let mean_s2 = data.s2().iter().sum::<f64>() / n;
    if mean_s2 > 0.0 {
        (center, mean_s2.sqrt())
    } else {
        (center, 1.0)
    }
}

/// Fits an emulator to replicated data.
pub fn fit(data: &ReplicateData, opts: &FitOptions) -> Result<EmulatorModel> {
    data.validate()?;
    check_fit_preconditions(data)?;
    if opts.starts == 0 {
        return Err(Error::InvalidArgument("at least one optimizer start is required".into()));
    }
    let (center, scale) = standardization(data);
    let first = data.ybar()[0];
    if data.ybar().iter().all(|&y| y == first) && data.s2().iter().all(|&s| s == 0.0) {
        log::warn!("constant training data; fitting a constant emulator");
        return EmulatorModel::from_params(ModelParams {
            mode: opts.mode,
            data: data.clone(),
            center,
            scale,
            floor: NOISE_FLOOR,
            lengthscales: vec![1.0; data.dim()],
            nu: 1.0,
            mu0: 0.0,
            noise: NoiseField::Constant { lambda: 0.0 },
            degenerate: true,
        });
    }
    let ybar: Vec<f64> = data.ybar().iter().map(|y| (y - center) / scale).collect();
    let s2: Vec<f64> = data.s2().iter().map(|s| s / (scale * scale)).collect();
    let problem = Standardized {
        x: data.x(),
        a: data.replicates(),
        ybar: &ybar,
        s2: &s2,
        floor: NOISE_FLOOR,
    };
    let d = data.dim();
    let starts: Vec<Vec<f64>> = lhs_maximin(d, opts.starts, opts.seed, 20)
        .points
        .into_iter()
        .map(|p| p.iter().map(|u| (0.1f64.ln() + u * (2.0f64.ln() - 0.1f64.ln())).exp()).collect())
        .collect();
    let (lengthscales, nu, noise) = match opts.mode {
        FitMode::Homoskedastic => problem.fit_homoskedastic(&starts, opts.max_iters)?,
        FitMode::Joint => problem.fit_joint(&starts, opts.max_iters)?,
        FitMode::Staged => problem.fit_staged(&starts, opts.max_iters)?,
    };
    let lambda = problem.noise_at_design(&noise)?;
    let cache = KernelCache::new(data.x(), &lengthscales);
    let mu0 = main_loglik_cached(&problem.summaries(), &cache, d, nu, &lambda, None, false)?.mu0;
    EmulatorModel::from_params(ModelParams {
        mode: opts.mode,
        data: data.clone(),
        center,
        scale,
        floor: NOISE_FLOOR,
        lengthscales,
        nu,
        mu0,
        noise,
        degenerate: false,
    })
}

struct Standardized<'a> {
    x: &'a [Vec<f64>],
    a: &'a [u32],
    ybar: &'a [f64],
    s2: &'a [f64],
    floor: f64,
}

impl Standardized<'_> {
    fn summaries(&self) -> Summaries<'_> {
        Summaries {
            x: self.x,
            a: self.a,
            ybar: self.ybar,
            s2: self.s2,
        }
    }

    fn d(&self) -> usize {
        self.x[0].len()
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    /// Log sample variances at replicated locations; locations with a
    /// single run take the average of the others.
    fn empirical_log_noise(&self) -> Vec<f64> {
        let logs: Vec<Option<f64>> = self
            .a
            .iter()
            .zip(self.s2)
            .map(|(&a, &s)| (a >= 2).then(|| s.max(self.floor).ln()))
            .collect();
        let known: Vec<f64> = logs.iter().flatten().copied().collect();
        let avg = known.iter().sum::<f64>() / known.len() as f64;
        logs.into_iter().map(|v| v.unwrap_or(avg)).collect()
    }

    fn noise_at_design(&self, noise: &NoiseField) -> Result<Vec<f64>> {
        match noise {
            NoiseField::Constant { lambda } => Ok(vec![self.floor + lambda; self.n()]),
            NoiseField::Latent { lengthscales, g, delta } => {
                let lat = latent_field(self.x, self.a, lengthscales, *g, delta)?;
                Ok(lat.z.iter().map(|z| self.floor + z.exp()).collect())
            }
        }
    }

    fn homoskedastic_objective(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.d();
        let (bl, bn, bh) = (lengthscale_bounds(), nu_bounds(), homoskedastic_bounds());
        let ls: Vec<f64> = u[..d].iter().map(|&v| bl.value(v).exp()).collect();
        let nu = bn.value(u[d]).exp();
        let v = bh.value(u[d + 1]).exp();
        let lambda = vec![self.floor + v; self.n()];
        let cache = KernelCache::new(self.x, &ls);
        let m = main_loglik_cached(&self.summaries(), &cache, d, nu, &lambda, None, true)?;
        let mut grad: Vec<f64> = (0..d).map(|k| m.grad_log_l[k] * bl.slope(u[k])).collect();
        grad.push(m.grad_log_nu * bn.slope(u[d]));
        grad.push(m.grad_lambda.iter().sum::<f64>() * v * bh.slope(u[d + 1]));
        Ok((m.loglik, grad))
    }

    /// Layout of `u`: lengthscales, nu, smoother lengthscales, log nugget, latent values.
    fn joint_objective(&self, nu_g: f64, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.d();
        let (bl, bn, bg) = (lengthscale_bounds(), nu_bounds(), nugget_bounds());
        let ls: Vec<f64> = u[..d].iter().map(|&v| bl.value(v).exp()).collect();
        let nu = bn.value(u[d]).exp();
        let lg: Vec<f64> = u[d + 1..2 * d + 1].iter().map(|&v| bl.value(v).exp()).collect();
        let g = bg.value(u[2 * d + 1]).exp();
        let delta = &u[2 * d + 2..];
        let lat = latent_field(self.x, self.a, &lg, g, delta)?;
        let ez: Vec<f64> = lat.z.iter().map(|z| z.exp()).collect();
        let lambda: Vec<f64> = ez.iter().map(|e| self.floor + e).collect();
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("latent noise".into()));
        }
        let cache = KernelCache::new(self.x, &ls);
        let m = main_loglik_cached(&self.summaries(), &cache, d, nu, &lambda, None, true)?;
        let pen = latent_penalty(&lat, self.a, g, nu_g, d);
        let gz: Vec<f64> = m.grad_lambda.iter().zip(&ez).map(|(gl, e)| gl * e).collect();
        let pb = latent_pullback(&lat, self.a, g, &gz, d);
        let mut grad = Vec::with_capacity(u.len());
        grad.extend((0..d).map(|k| m.grad_log_l[k] * bl.slope(u[k])));
        grad.push(m.grad_log_nu * bn.slope(u[d]));
        grad.extend((0..d).map(|k| (pb.grad_log_lg[k] + pen.grad_log_lg[k]) * bl.slope(u[d + 1 + k])));
        grad.push((pb.grad_log_g + pen.grad_log_g) * bg.slope(u[2 * d + 1]));
        grad.extend(pb.grad_delta.iter().zip(&pen.grad_delta).map(|(a, b)| a + b));
        Ok((m.loglik + pen.value, grad))
    }

    fn fit_homoskedastic(&self, starts: &[Vec<f64>], iters: u64) -> Result<(Vec<f64>, f64, NoiseField)> {
        let d = self.d();
        let (bl, bn, bh) = (lengthscale_bounds(), nu_bounds(), homoskedastic_bounds());
        let objective = |u: &[f64]| self.homoskedastic_objective(u);
        let replicated: Vec<f64> = self
            .a
            .iter()
            .zip(self.s2)
            .filter(|(&a, _)| a >= 2)
            .map(|(_, &s)| s)
            .collect();
        let v0 = (replicated.iter().sum::<f64>() / replicated.len() as f64).max(self.floor);
        let us: Vec<Vec<f64>> = starts
            .iter()
            .map(|ls| {
                let mut u: Vec<f64> = ls.iter().map(|l| bl.inverse(l.ln())).collect();
                u.push(bn.inverse(0.0));
                u.push(bh.inverse(v0.ln()));
                u
            })
            .collect();
        let best = maximize(&objective, &us, iters)?;
        let u = best.u;
        Ok((
            u[..d].iter().map(|&v| bl.value(v).exp()).collect(),
            bn.value(u[d]).exp(),
            NoiseField::Constant {
                lambda: bh.value(u[d + 1]).exp(),
            },
        ))
    }

    fn fit_joint(&self, starts: &[Vec<f64>], iters: u64) -> Result<(Vec<f64>, f64, NoiseField)> {
        let (d, n) = (self.d(), self.n());
        let (bl, bn, bg) = (lengthscale_bounds(), nu_bounds(), nugget_bounds());
        let delta0 = self.empirical_log_noise();
        let m0 = delta0.iter().sum::<f64>() / n as f64;
        let nu_g = (delta0.iter().map(|v| (v - m0).powi(2)).sum::<f64>() / n as f64).max(0.05);
        let objective = |u: &[f64]| self.joint_objective(nu_g, u);
        let us: Vec<Vec<f64>> = starts
            .iter()
            .map(|ls| {
                let mut u: Vec<f64> = ls.iter().map(|l| bl.inverse(l.ln())).collect();
                u.push(bn.inverse(0.0));
                u.extend(ls.iter().map(|l| bl.inverse(l.ln())));
                u.push(bg.inverse(0.1f64.ln()));
                u.extend(&delta0);
                u
            })
            .collect();
        let best = maximize(&objective, &us, iters)?;
        let u = best.u;
        Ok((
            u[..d].iter().map(|&v| bl.value(v).exp()).collect(),
            bn.value(u[d]).exp(),
            NoiseField::Latent {
                lengthscales: u[d + 1..2 * d + 1].iter().map(|&v| bl.value(v).exp()).collect(),
                g: bg.value(u[2 * d + 1]).exp(),
                delta: u[2 * d + 2..].to_vec(),
            },
        ))
    }

    fn fit_staged(&self, starts: &[Vec<f64>], iters: u64) -> Result<(Vec<f64>, f64, NoiseField)> {
        let (d, n) = (self.d(), self.n());
        let (bl, bn, bg) = (lengthscale_bounds(), nu_bounds(), nugget_bounds());
        let delta = self.empirical_log_noise();
        let noise = if delta.iter().all(|&v| v == delta[0]) {
            NoiseField::Latent {
                lengthscales: vec![1.0; d],
                g: 1.0,
                delta,
            }
        } else {
            // smoother hyperparameters by profile likelihood of the log variances
            let objective = |u: &[f64]| -> Result<(f64, Vec<f64>)> {
                let lg: Vec<f64> = u[..d].iter().map(|&v| bl.value(v).exp()).collect();
                let g = bg.value(u[d]).exp();
                let lat = latent_field(self.x, self.a, &lg, g, &delta)?;
                let e_m_e: f64 = (0..n).map(|i| (delta[i] - lat.mean) * lat.beta[i]).sum();
                let nu_g = (e_m_e / n as f64).max(1e-12);
                let pen = latent_penalty(&lat, self.a, g, nu_g, d);
                let mut grad: Vec<f64> = (0..d).map(|k| pen.grad_log_lg[k] * bl.slope(u[k])).collect();
                grad.push(pen.grad_log_g * bg.slope(u[d]));
                Ok((pen.value - 0.5 * n as f64 * nu_g.ln(), grad))
            };
            let us: Vec<Vec<f64>> = starts
                .iter()
                .map(|ls| {
                    let mut u: Vec<f64> = ls.iter().map(|l| bl.inverse(l.ln())).collect();
                    u.push(bg.inverse(0.1f64.ln()));
                    u
                })
                .collect();
            let best = maximize(&objective, &us, iters)?;
            NoiseField::Latent {
                lengthscales: best.u[..d].iter().map(|&v| bl.value(v).exp()).collect(),
                g: bg.value(best.u[d]).exp(),
                delta,
            }
        };
        let lambda = self.noise_at_design(&noise)?;
        let s = self.summaries();
        let objective = |u: &[f64]| -> Result<(f64, Vec<f64>)> {
            let ls: Vec<f64> = u[..d].iter().map(|&v| bl.value(v).exp()).collect();
            let nu = bn.value(u[d]).exp();
            let cache = KernelCache::new(self.x, &ls);
            let m = main_loglik_cached(&s, &cache, d, nu, &lambda, None, true)?;
            let mut grad: Vec<f64> = (0..d).map(|k| m.grad_log_l[k] * bl.slope(u[k])).collect();
            grad.push(m.grad_log_nu * bn.slope(u[d]));
            Ok((m.loglik, grad))
        };
        let us: Vec<Vec<f64>> = starts
            .iter()
            .map(|ls| {
                let mut u: Vec<f64> = ls.iter().map(|l| bl.inverse(l.ln())).collect();
                u.push(bn.inverse(0.0));
                u
            })
            .collect();
        let best = maximize(&objective, &us, iters)?;
        Ok((
            best.u[..d].iter().map(|&v| bl.value(v).exp()).collect(),
            bn.value(best.u[d]).exp(),
            noise,
        ))
    }
}

impl EmulatorModel {
    /// Rebuilds the cached factorization from stored parameters.
    pub fn from_params(params: ModelParams) -> Result<Self> {
        params.data.validate()?;
        let d = params.data.dim();
        let n = params.data.n();
        if params.lengthscales.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: params.lengthscales.len(),
            });
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !(positive(params.scale)
            && positive(params.nu)
            && params.floor.is_finite()
            && params.floor >= 0.0
            && params.center.is_finite()
            && params.mu0.is_finite()
            && params.lengthscales.iter().all(|&l| positive(l)))
        {
            return Err(Error::InvalidArgument("emulator parameters must be finite and positive".into()));
        }
        match &params.noise {
            NoiseField::Constant { lambda } if !(lambda.is_finite() && *lambda >= 0.0) => {
                return Err(Error::InvalidArgument("noise variance must be finite and nonnegative".into()));
            }
            NoiseField::Latent { lengthscales, g, delta } => {
                if lengthscales.len() != d || delta.len() != n {
                    return Err(Error::InvalidArgument("latent noise field does not match the data".into()));
                }
                if !(positive(*g) && lengthscales.iter().all(|&l| positive(l)) && delta.iter().all(|v| v.is_finite())) {
                    return Err(Error::InvalidArgument("latent noise parameters must be finite".into()));
                }
            }
            _ => {}
        }
        if params.degenerate {
            return Ok(EmulatorModel { params, cache: None });
        }
        let ybar: Vec<f64> = params.data.ybar().iter().map(|y| (y - params.center) / params.scale).collect();
        let s2: Vec<f64> = params.data.s2().iter().map(|s| s / (params.scale * params.scale)).collect();
        let st = Standardized {
            x: params.data.x(),
            a: params.data.replicates(),
            ybar: &ybar,
            s2: &s2,
            floor: params.floor,
        };
        let (lambda, noise) = match &params.noise {
            NoiseField::Constant { lambda } => (vec![params.floor + lambda; n], NoiseCache::Constant(params.floor + lambda)),
            NoiseField::Latent { lengthscales, g, delta } => {
                let lat = latent_field(st.x, st.a, lengthscales, *g, delta)?;
                let lambda = lat.z.iter().map(|z| params.floor + z.exp()).collect();
                (
                    lambda,
                    NoiseCache::Latent {
                        lengthscales: lengthscales.clone(),
                        scaled: scale_rows(st.x, lengthscales),
                        beta: lat.beta.iter().copied().collect(),
                        mean: lat.mean,
                    },
                )
            }
        };
        let kc = KernelCache::new(st.x, &params.lengthscales);
        let m = main_loglik_cached(&st.summaries(), &kc, d, params.nu, &lambda, Some(params.mu0), false)?;
        let cinv = m.factor.inverse();
        let loo_sq: f64 = (0..n).map(|i| (m.alpha[i] / cinv[(i, i)]).powi(2)).sum();
        let total = params.data.total() as f64;
        let cache = Cache {
            scaled: kc.scaled,
            lower: m.factor.lower_row_major(),
            alpha: m.alpha.iter().copied().collect(),
            noise,
            lambda,
            loglik: m.loglik - total * params.scale.ln(),
            loo_rmse: params.scale * (loo_sq / n as f64).sqrt(),
            jitter: m.factor.jitter,
        };
        Ok(EmulatorModel {
            params,
            cache: Some(cache),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn data(&self) -> &ReplicateData {
        &self.params.data
    }

    pub fn dim(&self) -> usize {
        self.params.data.dim()
    }

    pub fn is_degenerate(&self) -> bool {
        self.params.degenerate
    }

    /// Process variance in output units; an upper bound on `var_mean` anywhere.
    pub fn prior_variance(&self) -> f64 {
        if self.params.degenerate {
            0.0
        } else {
            self.params.nu * self.params.scale * self.params.scale
        }
    }

    /// Fitted noise variances at the design locations, in output units.
    pub fn design_noise(&self) -> Vec<f64> {
        let s2 = self.params.scale * self.params.scale;
        match &self.cache {
            Some(c) => c.lambda.iter().map(|l| l * s2).collect(),
            None => vec![self.params.floor * s2; self.params.data.n()],
        }
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        match &self.cache {
            Some(c) => FitDiagnostics {
                loglik: c.loglik,
                loo_rmse: c.loo_rmse,
                jitter: c.jitter,
                degenerate: false,
            },
            None => FitDiagnostics {
                loglik: self.loglik(),
                loo_rmse: 0.0,
                jitter: 0.0,
                degenerate: true,
            },
        }
    }

    /// Full-data log-likelihood of all runs, in output units.
    pub fn loglik(&self) -> f64 {
        match &self.cache {
            Some(c) => c.loglik,
            None => {
                let var = self.params.floor * self.params.scale * self.params.scale;
                -0.5 * self.params.data.total() as f64 * (2.0 * std::f64::consts::PI * var).ln()
            }
        }
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.params.data.n();
        Workspace {
            xs: vec![0.0; self.dim()],
            k: vec![0.0; n],
            work: vec![0.0; n],
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Mean and noise variance at `x`. Leaves the cross-correlations in `ws`
    /// for a following [`EmulatorModel::var_mean_from_workspace`].
    pub fn mean_and_noise(&self, x: &[f64], ws: &mut Workspace) -> Result<(f64, f64)> {
        self.check_point(x)?;
        let p = &self.params;
        let s2 = p.scale * p.scale;
        let Some(c) = &self.cache else {
            return Ok((p.center, p.floor * s2));
        };
        let d = self.dim();
        for k in 0..d {
            ws.xs[k] = x[k] / p.lengthscales[k];
        }
        cross_correlation(&ws.xs, &c.scaled, d, &mut ws.k);
        let dot: f64 = ws.k.iter().zip(&c.alpha).map(|(k, a)| k * a).sum();
        let mean = p.center + p.scale * (p.mu0 + p.nu * dot);
        let lambda = match &c.noise {
            NoiseCache::Constant(l) => *l,
            NoiseCache::Latent {
                lengthscales,
                scaled,
                beta,
                mean,
            } => {
                let mut z = *mean;
                for (i, b) in beta.iter().enumerate() {
                    let row = &scaled[i * d..(i + 1) * d];
                    let mut sq = 0.0;
                    for k in 0..d {
                        let diff = x[k] / lengthscales[k] - row[k];
                        sq += diff * diff;
                    }
                    z += b * matern52(sq.sqrt());
                }
                p.floor + z.exp()
            }
        };
        Ok((mean, lambda * s2))
    }

    /// Variance of the mean at the point last passed to [`EmulatorModel::mean_and_noise`].
    pub fn var_mean_from_workspace(&self, ws: &mut Workspace) -> f64 {
        let Some(c) = &self.cache else {
            return 0.0;
        };
        let p = &self.params;
        let n = p.data.n();
        let q = forward_sq_norm(&c.lower, n, &ws.k, &mut ws.work);
        (p.nu - p.nu * p.nu * q).max(0.0) * p.scale * p.scale
    }

    /// Mean, mean variance and noise variance at a single input.
    pub fn predict_point(&self, x: &[f64], ws: &mut Workspace) -> Result<(f64, f64, f64)> {
        let (m, vn) = self.mean_and_noise(x, ws)?;
        let vm = self.var_mean_from_workspace(ws);
        Ok((m, vm, vn))
    }

    pub fn predict(&self, xnew: &[Vec<f64>]) -> Result<Prediction> {
        let mut ws = self.workspace();
        let mut out = Prediction {
            mean: Vec::with_capacity(xnew.len()),
            var_mean: Vec::with_capacity(xnew.len()),
            var_noise: Vec::with_capacity(xnew.len()),
        };
        for x in xnew {
            let (m, vm, vn) = self.predict_point(x, &mut ws)?;
            out.mean.push(m);
            out.var_mean.push(vm);
            out.var_noise.push(vn);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let archive = Archive {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            model: self.params.clone(),
        };
        Ok(serde_json::to_string_pretty(&archive)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let archive: Archive = serde_json::from_str(s)?;
        if archive.format != ARCHIVE_FORMAT {
            return Err(Error::Archive(format!("unexpected format `{}`", archive.format)));
        }
        if archive.version != ARCHIVE_VERSION {
            return Err(Error::Archive(format!("unsupported version {}", archive.version)));
        }
        EmulatorModel::from_params(archive.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EmulatorModel::from_json(&s)
    }
}

/// Full-data log-likelihood of replicated data under fixed hyperparameters,
/// all in output units.
pub fn replicate_loglik(data: &ReplicateData, lengthscales: &[f64], nu: f64, lambda: &[f64], mu0: f64) -> Result<f64> {
    data.validate()?;
    if lengthscales.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: lengthscales.len(),
        });
    }
    if lambda.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: lambda.len(),
        });
    }
    let s = Summaries {
        x: data.x(),
        a: data.replicates(),
        ybar: data.ybar(),
        s2: data.s2(),
    };
    let cache = KernelCache::new(data.x(), lengthscales);
    Ok(main_loglik_cached(&s, &cache, data.dim(), nu, lambda, Some(mu0), false)?.loglik)
}

#[cfg(test)]
mod tests;
