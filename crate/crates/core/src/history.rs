//! Implausibility, NROY filtering over candidate grids and optical depth.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emulator::{EmulatorModel, Workspace};
use crate::error::{Error, Result};
use crate::param_space::{CandidateGrid, NroySet};
use crate::simulator::{extract_targets, RunOutput, TargetSpec};

/// One observed quantity to match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub name: String,
    pub spec: TargetSpec,
    pub observed: f64,
    /// Observation error variance.
    #[serde(default)]
    pub obs_var: f64,
    /// Model discrepancy variance.
    #[serde(default)]
    pub discrepancy_var: f64,
}

/// Observed targets with unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Target>", into = "Vec<Target>")]
pub struct TargetSet {
    targets: Vec<Target>,
}

impl TryFrom<Vec<Target>> for TargetSet {
    type Error = Error;

    fn try_from(v: Vec<Target>) -> Result<Self> {
        TargetSet::new(v)
    }
}

impl From<TargetSet> for Vec<Target> {
    fn from(t: TargetSet) -> Self {
        t.targets
    }
}

impl TargetSet {
    pub fn new(targets: Vec<Target>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &targets {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate target name `{}`", t.name)));
            }
            if !t.observed.is_finite() {
                return Err(Error::NonFinite(format!("observed value of `{}`", t.name)));
            }
            for v in [t.obs_var, t.discrepancy_var] {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "variances of `{}` must be finite and nonnegative",
                        t.name
                    )));
                }
            }
        }
        Ok(TargetSet { targets })
    }

    /// Reads each spec off an observed run; targets are named after their spec.
    pub fn from_run(out: &RunOutput, specs: &[TargetSpec], obs_var: f64, discrepancy_var: f64) -> Result<Self> {
        let values = extract_targets(out, specs)?;
        TargetSet::new(
            specs
                .iter()
                .zip(values)
                .map(|(s, v)| Target {
                    name: s.to_string(),
                    spec: *s,
                    observed: v,
                    obs_var,
                    discrepancy_var,
                })
                .collect(),
        )
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn specs(&self) -> Vec<TargetSpec> {
        self.targets.iter().map(|t| t.spec).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Target> {
        self.targets.iter().find(|t| t.name == name)
    }

    /// The named targets, in the order given.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<TargetSet> {
        let picked = names
            .iter()
            .map(|n| {
                self.get(n.as_ref())
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown target `{}`", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        TargetSet::new(picked)
    }
}

/// Settings of one history-matching wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveConfig {
    /// Target names, looked up in the observed target set.
    pub targets: Vec<String>,
    pub cutoff: f64,
    /// Number of new design points proposed after this wave.
    #[serde(default = "default_new_points")]
    pub new_points: usize,
    /// Replicates per design point simulated in this wave.
    pub replicates: u32,
}

fn default_new_points() -> usize {
    50
}

/// Checks a wave schedule: at least one wave, positive nonincreasing cutoffs,
/// nonempty target lists.
pub fn validate_schedule(waves: &[WaveConfig]) -> Result<()> {
    if waves.is_empty() {
        return Err(Error::Config("at least one wave is required".into()));
    }
    let mut prev = f64::INFINITY;
    for (k, w) in waves.iter().enumerate() {
        if !(w.cutoff.is_finite() && w.cutoff > 0.0) {
            return Err(Error::Config(format!("wave {}: cutoff must be positive", k + 1)));
        }
        if w.cutoff > prev {
            return Err(Error::Config(format!(
                "wave {}: cutoff {} exceeds the previous wave's {}",
                k + 1,
                w.cutoff,
                prev
            )));
        }
        if w.targets.is_empty() {
            return Err(Error::Config(format!("wave {}: no targets", k + 1)));
        }
        if w.replicates == 0 || w.new_points == 0 {
            return Err(Error::Config(format!("wave {}: replicates and new points must be positive", k + 1)));
        }
        prev = w.cutoff;
    }
    Ok(())
}

/// `|Y - mu| / sqrt(var_g + var_md + var_eps)`.
pub fn implausibility(y: f64, mu: f64, var_g: f64, var_md: f64, var_eps: f64) -> Result<f64> {
    let total = var_g + var_md + var_eps;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateVariance(format!("total variance {total}")));
    }
    Ok((y - mu).abs() / total.sqrt())
}

pub fn max_implausibility(values: &[f64]) -> Result<f64> {
    values
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::InvalidArgument("no implausibility values".into()))
}

/// Emulators paired with the targets they predict.
#[derive(Debug, Clone, Copy)]
pub struct Matcher<'a> {
    pub emulators: &'a [EmulatorModel],
    pub targets: &'a TargetSet,
}

impl<'a> Matcher<'a> {
    pub fn new(emulators: &'a [EmulatorModel], targets: &'a TargetSet) -> Result<Self> {
        if emulators.len() != targets.len() || targets.is_empty() {
            return Err(Error::EmulatorTargetMismatch {
                emulators: emulators.len(),
                targets: targets.len(),
            });
        }
        let d = emulators[0].dim();
        if let Some(e) = emulators.iter().find(|e| e.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: e.dim(),
            });
        }
        Ok(Matcher { emulators, targets })
    }

    pub fn dim(&self) -> usize {
        self.emulators[0].dim()
    }

    pub fn workspaces(&self) -> Vec<Workspace> {
        self.emulators.iter().map(|e| e.workspace()).collect()
    }

    /// Implausibility of every target at `x`.
    pub fn implausibilities(&self, x: &[f64], ws: &mut [Workspace]) -> Result<Vec<f64>> {
        self.emulators
            .iter()
            .zip(self.targets.targets())
            .zip(ws.iter_mut())
            .map(|((e, t), w)| {
                let (mu, vm, vn) = e.predict_point(x, w)?;
                implausibility(t.observed, mu, vm + vn, t.discrepancy_var, t.obs_var).map_err(|_| {
                    Error::DegenerateVariance(t.name.clone())
                })
            })
            .collect()
    }

    pub fn max_implausibility(&self, x: &[f64], ws: &mut [Workspace]) -> Result<f64> {
        max_implausibility(&self.implausibilities(x, ws)?)
    }

    /// Maximum implausibility at `x` if it is below `cutoff`, `None` otherwise.
    ///
    /// Targets are screened with the prior variance as an upper bound on the
    /// mean variance, so most excluded points never need a triangular solve.
    /// `order` is reordered to put the target that excluded the point first.
    fn screen(&self, x: &[f64], cutoff: f64, ws: &mut [Workspace], order: &mut [usize]) -> Result<Option<f64>> {
        let targets = self.targets.targets();
        let mut means = vec![(0.0, 0.0); order.len()];
        for pos in 0..order.len() {
            let q = order[pos];
            let t = &targets[q];
            let e = &self.emulators[q];
            let (mu, vn) = e.mean_and_noise(x, &mut ws[q])?;
            let bound = implausibility(t.observed, mu, e.prior_variance() + vn, t.discrepancy_var, t.obs_var)
                .map_err(|_| Error::DegenerateVariance(t.name.clone()))?;
            if bound >= cutoff {
                order[..=pos].rotate_right(1);
                return Ok(None);
            }
            means[q] = (mu, vn);
        }
        let mut imax = f64::NEG_INFINITY;
        for &q in order.iter() {
            let t = &targets[q];
            let e = &self.emulators[q];
            let vm = e.var_mean_from_workspace(&mut ws[q]);
            let (mu, vn) = means[q];
            let i = implausibility(t.observed, mu, vm + vn, t.discrepancy_var, t.obs_var)
                .map_err(|_| Error::DegenerateVariance(t.name.clone()))?;
            if i >= cutoff {
                return Ok(None);
            }
            imax = imax.max(i);
        }
        Ok(Some(imax))
    }
}

/// Default number of grid indices per parallel shard.
pub const DEFAULT_SHARD: usize = 4096;

/// Retains the grid points (all of them, or only `within`) whose maximum
/// implausibility is strictly below `cutoff`.
pub fn nroy_filter(
    grid: &CandidateGrid,
    matcher: &Matcher<'_>,
    cutoff: f64,
    within: Option<&[u64]>,
    shard: usize,
) -> Result<NroySet> {
    if matcher.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: matcher.dim(),
        });
    }
    if !(cutoff > 0.0) {
        return Err(Error::InvalidArgument("cutoff must be positive".into()));
    }
    let shard = shard.max(1) as u64;
    let total = within.map_or(grid.len(), |w| w.len() as u64);
    let n_shards = total.div_ceil(shard);
    let pieces: Vec<Result<Vec<(u64, f64)>>> = (0..n_shards)
        .into_par_iter()
        .map(|s| {
            let lo = s * shard;
            let hi = (lo + shard).min(total);
            let mut ws = matcher.workspaces();
            let mut order: Vec<usize> = (0..matcher.targets.len()).collect();
            let mut x = vec![0.0; grid.dim()];
            let mut kept = Vec::new();
            for pos in lo..hi {
                let idx = within.map_or(pos, |w| w[pos as usize]);
                grid.point_into(idx, &mut x)?;
                if let Some(imax) = matcher.screen(&x, cutoff, &mut ws, &mut order)? {
                    kept.push((idx, imax));
                }
            }
            Ok(kept)
        })
        .collect();
    let mut indices = Vec::new();
    let mut imax = Vec::new();
    for piece in pieces {
        for (i, v) in piece? {
            indices.push(i);
            imax.push(v);
        }
    }
    NroySet::new(grid.clone(), indices, imax, cutoff)
}

/// One completed wave's emulators, targets and cutoff.
#[derive(Debug, Clone, Copy)]
pub struct WaveFilter<'a> {
    pub matcher: Matcher<'a>,
    pub cutoff: f64,
}

/// Whether `x` is non-implausible under every listed wave.
pub fn in_region(x: &[f64], waves: &[WaveFilter<'_>]) -> Result<bool> {
    for w in waves {
        let mut ws = w.matcher.workspaces();
        if w.matcher.max_implausibility(x, &mut ws)? >= w.cutoff {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Share of grid points retained in each cell of a `bins x bins` partition of
/// the `(dim_i, dim_j)` plane. Cell `[a][b]` covers bin `a` of `dim_i` and bin `b` of `dim_j`.
pub fn optical_depth(nroy: &NroySet, dim_i: usize, dim_j: usize, bins: usize) -> Result<Vec<Vec<f64>>> {
    let grid = nroy.grid();
    let d = grid.dim();
    if dim_i >= d || dim_j >= d {
        return Err(Error::IndexOutOfRange {
            index: dim_i.max(dim_j) as u64,
            len: d as u64,
        });
    }
    if dim_i == dim_j {
        return Err(Error::InvalidArgument("optical depth needs two distinct dimensions".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be >= 1".into()));
    }
    let m = grid.m();
    let bin_of = |level: usize| level * bins / m;
    let mut per_bin = vec![0u64; bins];
    for l in 0..m {
        per_bin[bin_of(l)] += 1;
    }
    let rest = (m as u64).pow((d - 2) as u32);
    let mut hits = vec![vec![0u64; bins]; bins];
    let mut levels = vec![0usize; d];
    for &idx in nroy.indices() {
        grid.levels(idx, &mut levels);
        hits[bin_of(levels[dim_i])][bin_of(levels[dim_j])] += 1;
    }
    Ok((0..bins)
        .map(|a| {
            (0..bins)
                .map(|b| {
                    let total = per_bin[a] * per_bin[b] * rest;
                    if total == 0 {
                        0.0
                    } else {
                        hits[a][b] as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect())
}
