//! Approximate Bayesian computation against emulator surrogates.
//!
//! Priors are truncated normals fitted to the NROY cloud. Each chain is an
//! independence Metropolis-Hastings sampler: a proposal is drawn from the
//! prior (optionally widened), a pseudo-observation is drawn from the
//! surrogate's predictive distribution, and the move is accepted with the
//! ratio of Gaussian kernel weights.

mod predictive;

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::emulator::EmulatorModel;
use crate::error::{Error, Result};
use crate::param_space::{NroySet, ParameterSpace};
use crate::simulator::{seeded, Series, TargetSpec};

pub use predictive::{
    intervention_counterfactual, posterior_predictive, quantile_bands, write_bands_csv, Bands, Counterfactual,
    PairOutcome, PredictiveRuns, BAND_QUANTILES,
};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Normal distribution restricted to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0 && lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!(
                "truncated normal needs finite mean, sd > 0 and lo < hi; got {mean}, {sd}, [{lo}, {hi}]"
            )));
        }
        Ok(TruncatedNormal { mean, sd, lo, hi })
    }

    fn std_bounds(&self) -> (f64, f64) {
        ((self.lo - self.mean) / self.sd, (self.hi - self.mean) / self.sd)
    }

    /// Inverse-CDF sampling, working in the lower tail for accuracy.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = std_normal();
        let (a, b) = self.std_bounds();
        let u: f64 = rng.random();
        let z = if a > 0.0 {
            // mirror so both bounds sit in the lower tail
            let (pa, pb) = (n.cdf(-b), n.cdf(-a));
            -n.inverse_cdf(pa + u * (pb - pa))
        } else {
            let (pa, pb) = (n.cdf(a), n.cdf(b));
            n.inverse_cdf(pa + u * (pb - pa))
        };
        (self.mean + self.sd * z).clamp(self.lo, self.hi)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let n = std_normal();
        let (a, b) = self.std_bounds();
        let z = (x - self.mean) / self.sd;
        if a > 0.0 {
            let (pa, pb) = (n.cdf(-b), n.cdf(-a));
            (pb - n.cdf(-z)) / (pb - pa)
        } else {
            (n.cdf(z) - n.cdf(a)) / (n.cdf(b) - n.cdf(a))
        }
    }

    /// Log density up to the normalizing constant of the truncation.
    fn ln_kernel(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z - self.sd.ln()
    }

    fn ln_mass(&self) -> f64 {
        let n = std_normal();
        let (a, b) = self.std_bounds();
        if a > 0.0 {
            (n.cdf(-a) - n.cdf(-b)).ln()
        } else {
            (n.cdf(b) - n.cdf(a)).ln()
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::NEG_INFINITY;
        }
        self.ln_kernel(x) - self.ln_mass() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Independent truncated-normal priors, one per dimension of `space`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet {
    pub space: ParameterSpace,
    pub marginals: Vec<TruncatedNormal>,
    /// Dimensions whose sample sd was raised to the floor.
    pub floored: Vec<String>,
}

/// Relative floor on prior scales, as a fraction of the bound width.
pub const PRIOR_SD_FLOOR: f64 = 1e-3;

/// Truncated-normal priors from the mean and sample sd of the NROY points (native units).
pub fn fit_priors(nroy: &NroySet) -> Result<PriorSet> {
    if nroy.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} NROY points; at least 2 are needed to fit priors",
            nroy.len()
        )));
    }
    let space = nroy.grid().space().clone();
    let d = space.len();
    let mut sum = vec![0.0; d];
    let mut pts = Vec::with_capacity(nroy.len());
    for u in nroy.points() {
        let x = space.denormalize(&u)?;
        for k in 0..d {
            sum[k] += x[k];
        }
        pts.push(x);
    }
    let n = pts.len() as f64;
    let mut marginals = Vec::with_capacity(d);
    let mut floored = Vec::new();
    for (k, dim) in space.dims().iter().enumerate() {
        let mean = sum[k] / n;
        let var = pts.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let floor = PRIOR_SD_FLOOR * dim.width();
        let mut sd = var.sqrt();
        if !(sd >= floor) {
            log::warn!("prior scale for `{}` floored at {floor}", dim.name);
            floored.push(dim.name.clone());
            sd = floor;
        }
        marginals.push(TruncatedNormal::new(mean, sd, dim.lo, dim.hi)?);
    }
    Ok(PriorSet {
        space,
        marginals,
        floored,
    })
}

impl PriorSet {
    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        self.marginals.iter().zip(x).map(|(m, &v)| m.ln_pdf(v)).sum()
    }
}

/// How squared deviations over the series are combined into one distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceNorm {
    /// Mean squared deviation.
    #[default]
    Mean,
    /// Sum of squared deviations.
    Sum,
    /// Largest squared deviation.
    Max,
}

/// Squared distance between a simulated and an observed vector under `norm`.
pub fn squared_distance(sim: &[f64], obs: &[f64], norm: DistanceNorm) -> Result<f64> {
    if sim.len() != obs.len() || sim.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: obs.len(),
            got: sim.len(),
        });
    }
    let sq = sim.iter().zip(obs).map(|(s, o)| (s - o) * (s - o));
    Ok(match norm {
        DistanceNorm::Mean => sq.sum::<f64>() / sim.len() as f64,
        DistanceNorm::Sum => sq.sum(),
        DistanceNorm::Max => sq.fold(0.0, f64::max),
    })
}

/// Gaussian kernel weight `exp(-sum_t (sim_t - obs_t)^2 / (2 eps^2 T))`.
pub fn distance_weight(sim: &[f64], obs: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be positive".into()));
    }
    Ok((-squared_distance(sim, obs, DistanceNorm::Mean)? / (2.0 * epsilon * epsilon)).exp())
}

/// Anything that produces a random pseudo-observation for a native-unit input.
pub trait Surrogate: Sync {
    fn output_len(&self) -> usize;
    fn sample(&self, theta: &[f64], rng: &mut Pcg64Mcg) -> Result<Vec<f64>>;
}

/// One emulator per output; each output is drawn independently from
/// `N(mean, var_mean + var_noise)`.
pub struct EmulatorSurrogate<'a> {
    pub space: &'a ParameterSpace,
    pub emulators: &'a [EmulatorModel],
}

impl Surrogate for EmulatorSurrogate<'_> {
    fn output_len(&self) -> usize {
        self.emulators.len()
    }

    fn sample(&self, theta: &[f64], rng: &mut Pcg64Mcg) -> Result<Vec<f64>> {
        let x = self.space.normalize(theta)?;
        self.emulators
            .iter()
            .map(|e| {
                let mut ws = e.workspace();
                let (m, vm, vn) = e.predict_point(&x, &mut ws)?;
                let z: f64 = rng.sample(StandardNormal);
                Ok(m + (vm + vn).sqrt() * z)
            })
            .collect()
    }
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Retained steps per chain, after burn-in.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Steps per chain before retention starts; a chain with no acceptance by
    /// then fails with an epsilon-too-small error.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub norm: DistanceNorm,
    /// Proposal sd as a multiple of each prior sd; all ones proposes from the prior itself.
    #[serde(default)]
    pub proposal_scale: Option<Vec<f64>>,
    /// If set, epsilon decays geometrically from this value to `epsilon` over the burn-in.
    #[serde(default)]
    pub ladder_start: Option<f64>,
    /// Outputs compared against the observations, one emulator each.
    #[serde(default = "default_targets")]
    pub targets: Vec<TargetSpec>,
}

/// Weekly-smoothed daily diagnoses and deaths at days 7, 14, ..., 84.
pub fn default_targets() -> Vec<TargetSpec> {
    [Series::NewDiagnosesWeekly, Series::NewDeathsWeekly]
        .into_iter()
        .flat_map(|s| (1..=12).map(move |w| TargetSpec::new(s, 7 * w)))
        .collect()
}

fn default_epsilon() -> f64 {
    5.0
}

fn default_chains() -> usize {
    5
}

fn default_samples() -> usize {
    2000
}

fn default_burn_in() -> usize {
    200
}

impl Default for AbcConfig {
    fn default() -> Self {
        AbcConfig {
            epsilon: default_epsilon(),
            chains: default_chains(),
            samples: default_samples(),
            burn_in: default_burn_in(),
            norm: DistanceNorm::Mean,
            proposal_scale: None,
            ladder_start: None,
            targets: default_targets(),
        }
    }
}

impl AbcConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("abc epsilon must be positive and finite".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("abc needs at least one distance target".into()));
        }
        if self.chains == 0 || self.samples == 0 {
            return Err(Error::Config("abc needs at least one chain and one sample".into()));
        }
        if let Some(s) = &self.proposal_scale {
            if s.len() != d || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("proposal_scale needs {d} positive entries")));
            }
        }
        if let Some(e0) = self.ladder_start {
            if !(e0 >= self.epsilon && e0.is_finite()) {
                return Err(Error::Config("ladder_start must be finite and >= epsilon".into()));
            }
        }
        Ok(())
    }

    fn epsilon_at(&self, step: usize) -> f64 {
        match self.ladder_start {
            Some(e0) if step < self.burn_in => {
                let frac = step as f64 / self.burn_in as f64;
                e0 * (self.epsilon / e0).powf(frac)
            }
            _ => self.epsilon,
        }
    }
}

/// Chain state after one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub theta: Vec<f64>,
    /// Root of the squared distance of the current state's pseudo-observation.
    pub distance: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub steps: Vec<TraceStep>,
}

/// Posterior draws with full per-chain traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub names: Vec<String>,
    pub burn_in: usize,
    pub epsilon: f64,
    pub chains: Vec<ChainTrace>,
}

/// Summary statistics of one posterior dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub draws: usize,
    pub epsilon: f64,
    pub acceptance_rates: Vec<f64>,
    pub marginals: Vec<MarginalSummary>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Posterior {
    /// Retained states, chain by chain.
    pub fn draws(&self) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .flat_map(|c| c.steps[self.burn_in..].iter().map(|s| s.theta.clone()))
            .collect()
    }

    pub fn distances(&self) -> Vec<f64> {
        self.chains
            .iter()
            .flat_map(|c| c.steps[self.burn_in..].iter().map(|s| s.distance))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.chains.iter().map(|c| c.steps.len() - self.burn_in).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Share of retained steps that accepted a proposal, per chain.
    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.chains
            .iter()
            .map(|c| {
                let kept = &c.steps[self.burn_in..];
                kept.iter().filter(|s| s.accepted).count() as f64 / kept.len() as f64
            })
            .collect()
    }

    pub fn summary(&self) -> PosteriorSummary {
        let draws = self.draws();
        let n = draws.len() as f64;
        let marginals = self
            .names
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let mut v: Vec<f64> = draws.iter().map(|d| d[k]).collect();
                let mean = v.iter().sum::<f64>() / n;
                let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
                v.sort_by(f64::total_cmp);
                MarginalSummary {
                    name: name.clone(),
                    mean,
                    sd,
                    q05: quantile_sorted(&v, 0.05),
                    q25: quantile_sorted(&v, 0.25),
                    q50: quantile_sorted(&v, 0.5),
                    q75: quantile_sorted(&v, 0.75),
                    q95: quantile_sorted(&v, 0.95),
                }
            })
            .collect();
        PosteriorSummary {
            draws: draws.len(),
            epsilon: self.epsilon,
            acceptance_rates: self.acceptance_rates(),
            marginals,
        }
    }

    /// Writes `chain_<k>.csv` files with columns `step,<names>,distance,accepted`.
    pub fn write_traces(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, chain) in self.chains.iter().enumerate() {
            let path = dir.join(format!("chain_{k}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["step".to_string()];
            header.extend(self.names.iter().cloned());
            header.push("distance".into());
            header.push("accepted".into());
            w.write_record(&header)?;
            for (i, s) in chain.steps.iter().enumerate() {
                let mut row = vec![i.to_string()];
                row.extend(s.theta.iter().map(|v| v.to_string()));
                row.push(s.distance.to_string());
                row.push(u8::from(s.accepted).to_string());
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, &self.summary())?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }
}

const TAG_ABC: u64 = 0xabc0_0001;

/// Candidates whose log kernel weight falls below this are treated as weight zero and rejected.
pub const MIN_LOG_WEIGHT: f64 = -700.0;

fn chain_seed(seed: u64, chain: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(chain as u64)
}

/// Runs `cfg.chains` independent samplers in parallel.
pub fn abc_sample(priors: &PriorSet, surrogate: &dyn Surrogate, obs: &[f64], cfg: &AbcConfig, seed: u64) -> Result<Posterior> {
    cfg.validate(priors.dim())?;
    if surrogate.output_len() != obs.len() {
        return Err(Error::EmulatorTargetMismatch {
            emulators: surrogate.output_len(),
            targets: obs.len(),
        });
    }
    let proposal: Option<Vec<TruncatedNormal>> = match &cfg.proposal_scale {
        Some(s) if s.iter().any(|&v| v != 1.0) => Some(
            priors
                .marginals
                .iter()
                .zip(s)
                .map(|(m, &k)| TruncatedNormal::new(m.mean, m.sd * k, m.lo, m.hi))
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };
    let chains = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(c, priors, proposal.as_deref(), surrogate, obs, cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(Posterior {
        names: priors.space.names().map(String::from).collect(),
        burn_in: cfg.burn_in,
        epsilon: cfg.epsilon,
        chains,
    })
}

fn run_chain(
    chain: usize,
    priors: &PriorSet,
    proposal: Option<&[TruncatedNormal]>,
    surrogate: &dyn Surrogate,
    obs: &[f64],
    cfg: &AbcConfig,
    seed: u64,
) -> Result<ChainTrace> {
    let mut rng = seeded(chain_seed(seed, chain), TAG_ABC);
    let draw = |rng: &mut Pcg64Mcg| match proposal {
        Some(q) => q.iter().map(|m| m.sample(rng)).collect::<Vec<f64>>(),
        None => priors.sample(rng),
    };
    let ln_q = |x: &[f64]| proposal.map_or(0.0, |q| q.iter().zip(x).map(|(m, &v)| m.ln_pdf(v)).sum::<f64>());
    let mut theta = draw(&mut rng);
    let mut d2 = squared_distance(&surrogate.sample(&theta, &mut rng)?, obs, cfg.norm)?;
    let total = cfg.burn_in + cfg.samples;
    let mut steps = Vec::with_capacity(total);
    let mut accepted_in_burn_in = 0usize;
    let mut min_d2 = d2;
    for step in 0..total {
        let eps = cfg.epsilon_at(step);
        let cand = draw(&mut rng);
        let cand_d2 = squared_distance(&surrogate.sample(&cand, &mut rng)?, obs, cfg.norm)?;
        min_d2 = min_d2.min(cand_d2);
        let mut ln_ratio = (d2 - cand_d2) / (2.0 * eps * eps);
        if proposal.is_some() {
            ln_ratio += priors.ln_pdf(&cand) - priors.ln_pdf(&theta) + ln_q(&theta) - ln_q(&cand);
        }
        let u: f64 = rng.random();
        let alive = -cand_d2 / (2.0 * eps * eps) > MIN_LOG_WEIGHT;
        let accept = alive && u.ln() < ln_ratio;
        if accept {
            theta = cand;
            d2 = cand_d2;
            if step < cfg.burn_in {
                accepted_in_burn_in += 1;
            }
        }
        steps.push(TraceStep {
            theta: theta.clone(),
            distance: d2.sqrt(),
            accepted: accept,
        });
        let check_at = if cfg.burn_in > 0 { cfg.burn_in } else { total };
        if step + 1 == check_at {
            let any = if cfg.burn_in > 0 {
                accepted_in_burn_in > 0
            } else {
                steps.iter().any(|s| s.accepted)
            };
            if !any {
                return Err(Error::EpsilonTooSmall {
                    chain,
                    steps: step + 1,
                    min_distance: min_d2.sqrt(),
                    epsilon: cfg.epsilon,
                });
            }
        }
    }
    Ok(ChainTrace { steps })
}

/// The `q`-quantile of root squared distances between surrogate draws at prior samples and `obs`.
pub fn pilot_epsilon(
    priors: &PriorSet,
    surrogate: &dyn Surrogate,
    obs: &[f64],
    norm: DistanceNorm,
    draws: usize,
    q: f64,
    seed: u64,
) -> Result<f64> {
    if draws == 0 || !(0.0..=1.0).contains(&q) {
        return Err(Error::Config("pilot needs draws >= 1 and a quantile in [0, 1]".into()));
    }
    let mut rng = seeded(seed, TAG_ABC ^ 0x5);
    let mut d = Vec::with_capacity(draws);
    for _ in 0..draws {
        let theta = priors.sample(&mut rng);
        d.push(squared_distance(&surrogate.sample(&theta, &mut rng)?, obs, norm)?.sqrt());
    }
    d.sort_by(f64::total_cmp);
    let eps = quantile_sorted(&d, q);
    if eps > 0.0 {
        Ok(eps)
    } else {
        Err(Error::EpsilonTooSmall {
            chain: 0,
            steps: draws,
            min_distance: d[0],
            epsilon: eps,
        })
    }
}

#[cfg(test)]
mod tests;
