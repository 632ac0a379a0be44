//! Posterior predictive runs and intervention counterfactuals through the simulator.

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{quantile_sorted, Posterior};
use crate::error::{Error, Result};
use crate::param_space::ParameterSpace;
use crate::simulator::{run, seeded, Intervention, RunOutput, Series, SimConfig, Theta};

/// Quantile levels of the predictive bands: 90% band, 50% band and median.
pub const BAND_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

const TAG_SELECT: u64 = 0x005e_1ec7;

/// Simulator runs at selected posterior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveRuns {
    /// Positions of the selected draws in `Posterior::draws()`.
    pub draw_index: Vec<usize>,
    pub thetas: Vec<Theta>,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunOutput>,
}

/// Per-day quantiles of one series across runs; `values[t][q]` follows `BAND_QUANTILES`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub series: Series,
    pub values: Vec<[f64; 5]>,
}

impl Bands {
    pub fn lower90(&self, day: usize) -> f64 {
        self.values[day][0]
    }

    pub fn median(&self, day: usize) -> f64 {
        self.values[day][2]
    }

    pub fn upper90(&self, day: usize) -> f64 {
        self.values[day][4]
    }

    /// Share of days on which `observed` lies inside the 90% band.
    pub fn coverage90(&self, observed: &[f64]) -> f64 {
        let n = observed.len().min(self.values.len());
        let inside = (0..n)
            .filter(|&t| observed[t] >= self.lower90(t) && observed[t] <= self.upper90(t))
            .count();
        inside as f64 / n as f64
    }
}

fn select_draws(post: &Posterior, k: usize, seed: u64) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let draws = post.draws();
    if k == 0 || k > draws.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {k} draws from a posterior of {}",
            draws.len()
        )));
    }
    let mut rng = seeded(seed, TAG_SELECT);
    let picked: Vec<usize> = index::sample(&mut rng, draws.len(), k).into_vec();
    let chosen = picked.iter().map(|&i| draws[i].clone()).collect();
    Ok((picked, chosen))
}

/// Runs the simulator at `k` posterior draws chosen without replacement, on
/// seeds `first_seed, first_seed + 1, ...`.
pub fn posterior_predictive(
    post: &Posterior,
    space: &ParameterSpace,
    base: Theta,
    k: usize,
    cfg: &SimConfig,
    first_seed: u64,
    select_seed: u64,
) -> Result<PredictiveRuns> {
    cfg.validate()?;
    let (draw_index, chosen) = select_draws(post, k, select_seed)?;
    let thetas = chosen
        .iter()
        .map(|x| Theta::from_point(space, x, base))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = (0..k as u64).map(|i| first_seed + i).collect();
    let runs = thetas
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(t, &s)| run(*t, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictiveRuns {
        draw_index,
        thetas,
        seeds,
        runs,
    })
}

/// Per-day quantile bands of `series` across `runs`.
pub fn quantile_bands(runs: &[RunOutput], series: Series) -> Result<Bands> {
    let first = runs
        .first()
        .ok_or_else(|| Error::InsufficientData("no runs to summarize".into()))?;
    let horizon = first.horizon();
    if runs.iter().any(|r| r.horizon() != horizon) {
        return Err(Error::InvalidArgument("runs differ in horizon".into()));
    }
    let all: Vec<Vec<f64>> = runs.iter().map(|r| r.series(series)).collect();
    let values = (0..horizon)
        .map(|t| {
            let mut v: Vec<f64> = all.iter().map(|s| s[t]).collect();
            v.sort_by(f64::total_cmp);
            BAND_QUANTILES.map(|q| quantile_sorted(&v, q))
        })
        .collect();
    Ok(Bands { series, values })
}

/// Long-format band table with columns `variable,day,quantile,value`; the
/// variable column holds each band's label.
pub fn write_bands_csv(path: &Path, bands: &[(&str, &Bands)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variable", "day", "quantile", "value"])?;
    for (label, b) in bands {
        for (day, row) in b.values.iter().enumerate() {
            for (q, v) in BAND_QUANTILES.iter().zip(row) {
                w.write_record([label.to_string(), day.to_string(), q.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One status-quo and intervention run sharing a draw and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub draw: usize,
    pub seed: u64,
    /// Mean active infections over the window.
    pub status_quo: f64,
    pub intervention: f64,
}

/// Paired comparison of mean late-window active infections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    /// Inclusive day range the outcome averages over.
    pub window: (usize, usize),
    pub pairs: Vec<PairOutcome>,
    /// Mean of status quo minus intervention.
    pub mean_reduction: f64,
    /// Undefined when the differences have no spread.
    pub t_statistic: Option<f64>,
    /// One-sided p-value against "no reduction".
    pub p_value: f64,
    #[serde(skip)]
    pub status_quo_runs: Vec<RunOutput>,
    #[serde(skip)]
    pub intervention_runs: Vec<RunOutput>,
}

impl Counterfactual {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["draw", "seed", "status_quo", "intervention", "reduction"])?;
        for p in &self.pairs {
            w.write_record([
                p.draw.to_string(),
                p.seed.to_string(),
                p.status_quo.to_string(),
                p.intervention.to_string(),
                (p.status_quo - p.intervention).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn window_mean(series: &[u32], window: (usize, usize)) -> f64 {
    let s = &series[window.0..=window.1];
    s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64
}

/// One-sided paired t-test of `mean(d) > 0`; returns `(t, p)`.
pub(crate) fn paired_t(d: &[f64]) -> (Option<f64>, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = if d.len() < 2 {
        0.0
    } else {
        d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    if var == 0.0 {
        let p = if mean > 0.0 && d.len() >= 2 { 0.0 } else { 1.0 };
        return (None, p);
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("degrees of freedom are positive");
    (Some(t), 1.0 - dist.cdf(t))
}

/// Runs each selected draw twice on the same seed, once under `cfg` as given
/// without intervention and once with `intervention`, and compares mean active
/// infections over `window`.
#[allow(clippy::too_many_arguments)]
pub fn intervention_counterfactual(
    post: &Posterior,
    space: &ParameterSpace,
    base: Theta,
    k: usize,
    cfg: &SimConfig,
    intervention: Intervention,
    window: (usize, usize),
    first_seed: u64,
    select_seed: u64,
) -> Result<Counterfactual> {
    let mut quo = cfg.clone();
    quo.intervention = None;
    let mut treated = cfg.clone();
    treated.intervention = Some(intervention);
    quo.validate()?;
    treated.validate()?;
    if window.0 > window.1 || window.1 >= cfg.horizon {
        return Err(Error::InvalidArgument(format!(
            "window {window:?} does not fit a {}-day horizon",
            cfg.horizon
        )));
    }
    let (draw_index, chosen) = select_draws(post, k, select_seed)?;
    let thetas = chosen
        .iter()
        .map(|x| Theta::from_point(space, x, base))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = thetas
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let seed = first_seed + i as u64;
            Ok((run(*t, seed, &quo)?, run(*t, seed, &treated)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<PairOutcome> = outcomes
        .iter()
        .enumerate()
        .map(|(i, (a, b))| PairOutcome {
            draw: draw_index[i],
            seed: first_seed + i as u64,
            status_quo: window_mean(&a.active_infections, window),
            intervention: window_mean(&b.active_infections, window),
        })
        .collect();
    let diffs: Vec<f64> = pairs.iter().map(|p| p.status_quo - p.intervention).collect();
    let (t_statistic, p_value) = paired_t(&diffs);
    let (status_quo_runs, intervention_runs) = outcomes.into_iter().unzip();
    Ok(Counterfactual {
        window,
        mean_reduction: diffs.iter().sum::<f64>() / diffs.len() as f64,
        pairs,
        t_statistic,
        p_value,
        status_quo_runs,
        intervention_runs,
    })
}
