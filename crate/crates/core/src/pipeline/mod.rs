//! End-to-end calibration pipeline over a run directory.
//!
//! Layout under the run directory:
//!
//! ```text
//! observed.csv            synthetic or real observations
//! store/                  runs.csv + manifest.json
//! wave_<k>/               design, emulators/, fit.csv, nroy.csv, proposal, summary.json
//! abc/                    emulators/, priors.json, posterior.json, traces/, summary.json
//! ppc/                    bands.csv, draws.csv, summary.json
//! counterfactual/         pairs.csv, bands.csv, summary.json
//! report.csv
//! ```
//!
//! Every stage reads its inputs from disk and writes a checkpoint when done,
//! so re-running a finished stage is a no-op and an interrupted run resumes
//! where it stopped.

mod config;
mod store;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::abc::{
    abc_sample, fit_priors, intervention_counterfactual, pilot_epsilon, posterior_predictive, quantile_bands,
    write_bands_csv, EmulatorSurrogate, Posterior, PosteriorSummary, PriorSet,
};
use crate::design::{lhs_maximin, maximin_select, plan_replicates, Design};
use crate::emulator::{fit, EmulatorModel, ReplicateData};
use crate::error::{Error, Result};
use crate::history::{in_region, nroy_filter, optical_depth, Matcher, TargetSet, WaveFilter};
use crate::param_space::{volume_fraction, CandidateGrid, NroySet, ParameterSpace};
use crate::simulator::{extract_targets, run, RunOutput, Series, TargetSpec, Theta};

pub use config::{
    AbcStage, CounterfactualConfig, DesignConfig, EmulatorConfig, ExportConfig, GridConfig, Paths, PipelineConfig,
    PpcConfig, TruthConfig, TEMPLATE,
};
pub use store::{RunRecord, RunStore, STORE_SCHEMA};

use store::write_atomic;

const TAG_LHS: u64 = 0x1;
const TAG_FIT: u64 = 0x2;
const TAG_ABC: u64 = 0x3;
const TAG_PPC: u64 = 0x4;
const TAG_CF: u64 = 0x5;

fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17) ^ tag.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Completed stages of one pipeline step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    stages: Vec<String>,
}

impl Checkpoint {
    fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("checkpoint.json");
        if path.exists() {
            read_json(&path)
        } else {
            Ok(Checkpoint::default())
        }
    }

    fn done(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s == stage)
    }

    fn mark(&mut self, dir: &Path, stage: &str) -> Result<()> {
        if !self.done(stage) {
            self.stages.push(stage.to_string());
            write_json(&dir.join("checkpoint.json"), self)?;
        }
        Ok(())
    }
}

/// Per-wave outcome, mirrored in `wave_<k>/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveSummary {
    pub wave: usize,
    pub targets: usize,
    pub cutoff: f64,
    pub design_points: usize,
    pub runs: u64,
    pub training_points: usize,
    pub training_runs: usize,
    pub nroy_points: usize,
    pub grid_points: u64,
    pub volume_fraction: f64,
    pub proposal_points: usize,
}

/// One row of the wave report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub wave: usize,
    pub targets: usize,
    pub cutoff: f64,
    pub nroy_points: usize,
    pub volume_percent: f64,
}

/// Result of the `nroy` export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NroyExport {
    pub wave: usize,
    pub nroy_points: usize,
    pub grid_points: u64,
    pub volume_fraction: f64,
    pub volume_percent: f64,
    /// Exported files, relative to the run directory.
    pub files: Vec<PathBuf>,
}

/// Outcome of the ABC stage, mirrored in `abc/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcReport {
    pub epsilon: f64,
    pub training_points: usize,
    pub training_runs: usize,
    pub floored_priors: Vec<String>,
    pub posterior: PosteriorSummary,
}

/// Outcome of the posterior predictive stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcReport {
    pub draws: usize,
    pub first_seed: u64,
    pub last_seed: u64,
    /// Share of days the observed daily diagnoses fall inside the 90% band.
    pub coverage_new_diagnoses: f64,
    pub coverage_new_deaths: f64,
}

/// Outcome of the counterfactual stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub pairs: usize,
    pub first_seed: u64,
    pub window: [usize; 2],
    pub mean_status_quo: f64,
    pub mean_intervention: f64,
    pub mean_reduction: f64,
    pub t_statistic: Option<f64>,
    pub p_value: f64,
}

/// Training inputs gathered from the store.
struct Training {
    data: Vec<ReplicateData>,
    points: usize,
    runs: usize,
}

/// A wave's fitted emulators and targets, loaded from disk.
struct WaveModels {
    emulators: Vec<EmulatorModel>,
    targets: TargetSet,
    cutoff: f64,
}

/// Orchestrates the stages over one run directory.
pub struct Pipeline {
    cfg: PipelineConfig,
    dir: PathBuf,
    space: ParameterSpace,
    grid: CandidateGrid,
}

impl Pipeline {
    /// Uses `cfg.paths.run_dir` as the run directory.
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        let dir = cfg.paths.run_dir.clone();
        Pipeline::with_run_dir(cfg, dir)
    }

    pub fn with_run_dir(cfg: PipelineConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let space = cfg.space()?;
        let grid = cfg.grid()?;
        let dir = dir.into();
        create_dir(&dir)?;
        Ok(Pipeline { cfg, dir, space, grid })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn run_dir(&self) -> &Path {
        &self.dir
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn grid(&self) -> &CandidateGrid {
        &self.grid
    }

    pub fn store(&self) -> Result<RunStore> {
        RunStore::open(&self.dir.join("store"), &self.space)
    }

    fn wave_dir(&self, k: usize) -> PathBuf {
        self.dir.join(format!("wave_{k}"))
    }

    fn order_error(stage: &str, missing: impl Into<String>) -> Error {
        Error::PipelineOrder {
            stage: stage.to_string(),
            missing: missing.into(),
        }
    }

    fn check_wave_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.cfg.waves.len() {
            return Err(Error::Config(format!(
                "wave {k} is not configured (1..={})",
                self.cfg.waves.len()
            )));
        }
        Ok(())
    }

    // ---- truth ----

    fn observed_path(&self) -> PathBuf {
        self.dir.join("observed.csv")
    }

    /// Simulates the designated truth and writes `observed.csv`.
    pub fn truth(&self) -> Result<RunOutput> {
        let out = run(self.cfg.truth.theta, self.cfg.truth.seed, &self.cfg.sim)?;
        let mut text = String::from("day,new_diagnoses,new_deaths,active_infections\n");
        for t in 0..out.horizon() {
            text.push_str(&format!(
                "{t},{},{},{}\n",
                out.new_diagnoses[t], out.new_deaths[t], out.active_infections[t]
            ));
        }
        write_atomic(&self.observed_path(), text.as_bytes())?;
        Ok(out)
    }

    /// Reads `observed.csv`.
    pub fn observed(&self) -> Result<RunOutput> {
        let path = self.observed_path();
        if !path.exists() {
            return Err(Self::order_error("observations", "observed.csv (run `truth` first)"));
        }
        let mut rdr = csv::Reader::from_path(&path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        if header != ["day", "new_diagnoses", "new_deaths", "active_infections"] {
            return Err(Error::InvalidArgument(format!(
                "{}: expected columns day,new_diagnoses,new_deaths,active_infections",
                path.display()
            )));
        }
        let (mut dx, mut de, mut ac) = (Vec::new(), Vec::new(), Vec::new());
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<u64> {
                rec[j]
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("{}: bad value on row {}", path.display(), i + 1)))
            };
            if num(0)? != i as u64 {
                return Err(Error::InvalidArgument(format!("{}: days must run 0, 1, 2, ...", path.display())));
            }
            let small = |v: u64| u32::try_from(v).map_err(|_| Error::InvalidArgument("count too large".into()));
            dx.push(small(num(1)?)?);
            de.push(small(num(2)?)?);
            ac.push(small(num(3)?)?);
        }
        if dx.len() != self.cfg.sim.horizon {
            return Err(Error::InvalidArgument(format!(
                "{}: {} days observed but the horizon is {}",
                path.display(),
                dx.len(),
                self.cfg.sim.horizon
            )));
        }
        RunOutput::from_daily(dx, de, ac)
    }

    /// Observed values of every wave target.
    pub fn targets(&self) -> Result<TargetSet> {
        TargetSet::from_run(
            &self.observed()?,
            &self.cfg.all_wave_specs()?,
            self.cfg.truth.obs_var,
            self.cfg.truth.discrepancy_var,
        )
    }

    /// Grid index nearest the truth.
    pub fn truth_index(&self) -> Result<u64> {
        let x = self.cfg.truth.theta.to_point(&self.space)?;
        self.grid.nearest_index(&self.space.normalize(&x)?)
    }

    // ---- waves ----

    fn wave_checkpoint(&self, k: usize) -> Result<Checkpoint> {
        Checkpoint::load(&self.wave_dir(k))
    }

    /// Whether every stage of wave `k` has completed.
    pub fn wave_complete(&self, k: usize) -> Result<bool> {
        Ok(self.wave_checkpoint(k)?.done("propose"))
    }

    /// Number of leading waves that are complete.
    pub fn waves_completed(&self) -> Result<usize> {
        let mut k = 0;
        while k < self.cfg.waves.len() && self.wave_complete(k + 1)? {
            k += 1;
        }
        Ok(k)
    }

    fn load_wave_models(&self, k: usize) -> Result<WaveModels> {
        let specs = self.cfg.wave_specs(k)?;
        let names: Vec<String> = specs.iter().map(|s| s.to_string()).collect();
        let targets = self.targets()?.subset(&names)?;
        let dir = self.wave_dir(k).join("emulators");
        let emulators = names
            .iter()
            .map(|n| EmulatorModel::load(&dir.join(format!("{n}.json"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(WaveModels {
            emulators,
            targets,
            cutoff: self.cfg.waves[k - 1].cutoff,
        })
    }

    /// NROY set checkpointed by wave `k`.
    pub fn nroy_set(&self, k: usize) -> Result<NroySet> {
        self.check_wave_index(k)?;
        if !self.wave_checkpoint(k)?.done("filter") {
            return Err(Self::order_error("nroy", format!("wave_{k}/filter")));
        }
        NroySet::read_csv(self.grid.clone(), self.cfg.waves[k - 1].cutoff, &self.wave_dir(k).join("nroy.csv"))
    }

    fn read_design(&self, path: &Path) -> Result<Design> {
        read_json(path)
    }

    fn write_design(&self, dir: &Path, stem: &str, design: &Design) -> Result<()> {
        write_json(&dir.join(format!("{stem}.json")), design)?;
        design.write_csv(&self.space, &dir.join(format!("{stem}.csv")))
    }

    /// Records of `batches` at design points inside the region left by the
    /// first `region_waves` waves, as replicate data for each of `specs`.
    fn training(&self, store: &RunStore, batches: &[String], region_waves: usize, specs: &[TargetSpec]) -> Result<Training> {
        let models = (1..=region_waves)
            .map(|w| self.load_wave_models(w))
            .collect::<Result<Vec<_>>>()?;
        let matchers = models
            .iter()
            .map(|m| Matcher::new(&m.emulators, &m.targets))
            .collect::<Result<Vec<_>>>()?;
        let filters: Vec<WaveFilter<'_>> = matchers
            .iter()
            .zip(&models)
            .map(|(matcher, m)| WaveFilter {
                matcher: *matcher,
                cutoff: m.cutoff,
            })
            .collect();
        let records: Vec<&RunRecord> = store
            .records()
            .iter()
            .filter(|r| batches.contains(&r.batch))
            .collect();
        let mut verdicts: Vec<(Vec<f64>, bool)> = Vec::new();
        let mut kept: Vec<&RunRecord> = Vec::new();
        for r in records {
            let inside = match verdicts.iter().find(|(p, _)| *p == r.unit) {
                Some((_, v)) => *v,
                None => {
                    let v = in_region(&r.unit, &filters)?;
                    verdicts.push((r.unit.clone(), v));
                    v
                }
            };
            if inside {
                kept.push(r);
            }
        }
        let points = verdicts.iter().filter(|(_, v)| *v).count();
        if kept.is_empty() {
            return Err(Error::InsufficientData("no stored runs fall inside the current region".into()));
        }
        let xs: Vec<Vec<f64>> = kept.iter().map(|r| r.unit.clone()).collect();
        let values: Vec<Vec<f64>> = kept
            .iter()
            .map(|r| extract_targets(&r.output, specs))
            .collect::<Result<_>>()?;
        let data = (0..specs.len())
            .map(|q| {
                let y: Vec<f64> = values.iter().map(|v| v[q]).collect();
                ReplicateData::from_pairs(&xs, &y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Training {
            data,
            points,
            runs: kept.len(),
        })
    }

    fn fit_and_save(&self, dir: &Path, specs: &[TargetSpec], training: &Training, seed: u64) -> Result<()> {
        let em_dir = dir.join("emulators");
        create_dir(&em_dir)?;
        let opts = self.cfg.emulator.options(seed);
        let models = training
            .data
            .par_iter()
            .map(|d| fit(d, &opts))
            .collect::<Result<Vec<_>>>()?;
        let mut diag = String::from("target,unique_points,runs,loglik,loo_rmse,jitter,degenerate\n");
        for ((spec, m), d) in specs.iter().zip(&models).zip(&training.data) {
            m.save(&em_dir.join(format!("{spec}.json")))?;
            let f = m.diagnostics();
            diag.push_str(&format!(
                "{spec},{},{},{},{},{},{}\n",
                d.n(),
                d.total(),
                f.loglik,
                f.loo_rmse,
                f.jitter,
                f.degenerate
            ));
        }
        write_atomic(&dir.join("fit.csv"), diag.as_bytes())
    }

    fn simulate(&self, store: &mut RunStore, batch: &str, design: &Design, replicates: u32) -> Result<u64> {
        if store.has_batch(batch) {
            return Ok(store.batch(batch).count() as u64);
        }
        let mut design = design.clone();
        let plan = plan_replicates(&mut design, replicates, store.next_seed());
        let theta_at = |u: &[f64]| -> Result<Theta> {
            Theta::from_point(&self.space, &self.space.denormalize(u)?, self.cfg.truth.theta)
        };
        let records = plan
            .par_iter()
            .map(|a| {
                let u = &design.points[a.point_id];
                Ok(RunRecord {
                    seed: a.seed,
                    batch: batch.to_string(),
                    point_id: a.point_id,
                    unit: u.clone(),
                    output: run(theta_at(u)?, a.seed, &self.cfg.sim)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = records.len() as u64;
        store.append(batch, records)?;
        Ok(n)
    }

    /// Runs wave `k` through design, simulate, fit, filter and propose,
    /// skipping stages already checkpointed.
    pub fn wave(&self, k: usize) -> Result<WaveSummary> {
        self.check_wave_index(k)?;
        let stage = format!("wave {k}");
        let dir = self.wave_dir(k);
        if k > 1 && !self.wave_complete(k - 1)? {
            return Err(Self::order_error(&stage, format!("wave_{}/propose", k - 1)));
        }
        let targets = self.targets()?;
        let mut cp = self.wave_checkpoint(k)?;
        if cp.done("propose") {
            return read_json(&dir.join("summary.json"));
        }
        create_dir(&dir)?;
        let wc = self.cfg.waves[k - 1].clone();
        let specs = self.cfg.wave_specs(k)?;
        let batch = format!("wave_{k}");

        if !cp.done("design") {
            let design = if k == 1 {
                let mut d = lhs_maximin(
                    self.space.len(),
                    wc.new_points,
                    sub_seed(self.cfg.seed, TAG_LHS),
                    self.cfg.design.lhs_restarts,
                );
                d.replicates = vec![wc.replicates; d.len()];
                d
            } else {
                let mut d = self.read_design(&self.wave_dir(k - 1).join("proposal.json"))?;
                d.replicates = vec![wc.replicates; d.len()];
                d
            };
            self.write_design(&dir, "design", &design)?;
            cp.mark(&dir, "design")?;
        }
        let design = self.read_design(&dir.join("design.json"))?;

        let mut store = self.store()?;
        if !cp.done("simulate") {
            let n = self.simulate(&mut store, &batch, &design, wc.replicates)?;
            log::info!("wave {k}: {n} runs stored");
            cp.mark(&dir, "simulate")?;
        }

        let batches: Vec<String> = (1..=k).map(|w| format!("wave_{w}")).collect();
        let training = self.training(&store, &batches, k - 1, &specs)?;
        if !cp.done("fit") {
            self.fit_and_save(&dir, &specs, &training, sub_seed(self.cfg.seed, TAG_FIT + k as u64))?;
            log::info!("wave {k}: {} emulators fitted on {} points", specs.len(), training.points);
            cp.mark(&dir, "fit")?;
        }

        if !cp.done("filter") {
            let models = self.load_wave_models(k)?;
            let matcher = Matcher::new(&models.emulators, &models.targets)?;
            let prev = if k > 1 { Some(self.nroy_set(k - 1)?) } else { None };
            let nroy = nroy_filter(
                &self.grid,
                &matcher,
                wc.cutoff,
                prev.as_ref().map(|p| p.indices()),
                self.cfg.grid.shard,
            )?;
            if nroy.is_empty() {
                return Err(Error::EmptyNroy { wave: k });
            }
            nroy.write_csv(&dir.join("nroy.csv"))?;
            log::info!("wave {k}: {} NROY points", nroy.len());
            cp.mark(&dir, "filter")?;
        }
        let nroy = self.nroy_set(k)?;

        if !cp.done("propose") {
            let candidates = nroy.points();
            let mut existing = Vec::new();
            for w in 1..=k {
                existing.extend(self.read_design(&self.wave_dir(w).join("design.json"))?.points);
            }
            let n = wc.new_points.min(candidates.len());
            let proposal = maximin_select(&candidates, n, &existing)?;
            self.write_design(&dir, "proposal", &proposal)?;
            let summary = WaveSummary {
                wave: k,
                targets: targets.subset(&wc.targets)?.len(),
                cutoff: wc.cutoff,
                design_points: design.len(),
                runs: design.total_runs(),
                training_points: training.points,
                training_runs: training.runs,
                nroy_points: nroy.len(),
                grid_points: self.grid.len(),
                volume_fraction: volume_fraction(&nroy),
                proposal_points: proposal.len(),
            };
            write_json(&dir.join("summary.json"), &summary)?;
            cp.mark(&dir, "propose")?;
        }
        read_json(&dir.join("summary.json"))
    }

    /// Runs every configured wave in order.
    pub fn waves(&self) -> Result<Vec<WaveSummary>> {
        (1..=self.cfg.waves.len()).map(|k| self.wave(k)).collect()
    }

    /// Re-filters wave `k` from its stored emulators and exports the NROY set,
    /// optical-depth tables and volume figures under `wave_<k>/exports`.
    pub fn nroy(&self, k: usize) -> Result<NroyExport> {
        let saved = self.nroy_set(k)?;
        let models = self.load_wave_models(k)?;
        let matcher = Matcher::new(&models.emulators, &models.targets)?;
        let prev = if k > 1 { Some(self.nroy_set(k - 1)?) } else { None };
        let nroy = nroy_filter(
            &self.grid,
            &matcher,
            models.cutoff,
            prev.as_ref().map(|p| p.indices()),
            self.cfg.grid.shard,
        )?;
        if nroy.indices() != saved.indices() {
            return Err(Error::StoreCorrupt(format!(
                "re-filtered wave {k} differs from its checkpointed NROY set"
            )));
        }
        let out = self.wave_dir(k).join("exports");
        create_dir(&out)?;
        let rel = |p: &Path| p.strip_prefix(&self.dir).unwrap_or(p).to_path_buf();
        let path = out.join("nroy.csv");
        nroy.write_csv(&path)?;
        let mut files = vec![rel(&path)];
        let bins = self.cfg.exports.optical_depth_bins;
        let names: Vec<&str> = self.space.names().collect();
        for i in 0..names.len() {
            for j in i + 1..names.len() {
                let depth = optical_depth(&nroy, i, j, bins)?;
                let mut text = format!("{}_bin,{}_bin,{}_mid,{}_mid,value\n", names[i], names[j], names[i], names[j]);
                let mid = |dim: usize, b: usize| {
                    let d = &self.space.dims()[dim];
                    d.lo + d.width() * (b as f64 + 0.5) / bins as f64
                };
                for (a, row) in depth.iter().enumerate() {
                    for (b, v) in row.iter().enumerate() {
                        text.push_str(&format!("{a},{b},{},{},{v}\n", mid(i, a), mid(j, b)));
                    }
                }
                let path = out.join(format!("optical_depth_{}_{}.csv", names[i], names[j]));
                write_atomic(&path, text.as_bytes())?;
                files.push(rel(&path));
            }
        }
        let frac = volume_fraction(&nroy);
        let export = NroyExport {
            wave: k,
            nroy_points: nroy.len(),
            grid_points: self.grid.len(),
            volume_fraction: frac,
            volume_percent: 100.0 * frac,
            files,
        };
        write_json(&out.join("volume.json"), &export)?;
        Ok(export)
    }

    // ---- calibration ----

    fn abc_dir(&self) -> PathBuf {
        self.dir.join("abc")
    }

    /// Simulates the final proposal, fits time-series emulators inside the
    /// final region and samples the posterior.
    pub fn abc(&self) -> Result<AbcReport> {
        let last = self.cfg.waves.len();
        if !self.wave_complete(last)? {
            return Err(Self::order_error("abc", format!("wave_{last}/propose")));
        }
        let dir = self.abc_dir();
        create_dir(&dir)?;
        let mut cp = Checkpoint::load(&dir)?;
        if cp.done("sample") {
            return read_json(&dir.join("summary.json"));
        }
        let sampler = &self.cfg.abc.sampler;
        let specs = sampler.targets.clone();
        let mut store = self.store()?;
        if !cp.done("simulate") {
            let design = self.read_design(&self.wave_dir(last).join("proposal.json"))?;
            self.simulate(&mut store, "abc", &design, self.cfg.abc.replicates)?;
            cp.mark(&dir, "simulate")?;
        }
        let mut batches: Vec<String> = (1..=last).map(|w| format!("wave_{w}")).collect();
        batches.push("abc".into());
        let training = self.training(&store, &batches, last, &specs)?;
        if !cp.done("fit") {
            self.fit_and_save(&dir, &specs, &training, sub_seed(self.cfg.seed, TAG_FIT))?;
            cp.mark(&dir, "fit")?;
        }
        let em_dir = dir.join("emulators");
        let emulators = specs
            .iter()
            .map(|s| EmulatorModel::load(&em_dir.join(format!("{s}.json"))))
            .collect::<Result<Vec<_>>>()?;
        let priors = fit_priors(&self.nroy_set(last)?)?;
        write_json(&dir.join("priors.json"), &priors)?;
        let obs = extract_targets(&self.observed()?, &specs)?;
        let surrogate = EmulatorSurrogate {
            space: &self.space,
            emulators: &emulators,
        };
        let seed = sub_seed(self.cfg.seed, TAG_ABC);
        let mut scfg = sampler.clone();
        if let Some(q) = self.cfg.abc.pilot_quantile {
            scfg.epsilon = pilot_epsilon(&priors, &surrogate, &obs, scfg.norm, self.cfg.abc.pilot_draws, q, seed)?;
            log::info!("abc: pilot epsilon {}", scfg.epsilon);
        }
        let posterior = abc_sample(&priors, &surrogate, &obs, &scfg, seed)?;
        write_json(&dir.join("posterior.json"), &posterior)?;
        posterior.write_traces(&dir.join("traces"))?;
        let report = AbcReport {
            epsilon: scfg.epsilon,
            training_points: training.points,
            training_runs: training.runs,
            floored_priors: priors.floored.clone(),
            posterior: posterior.summary(),
        };
        write_json(&dir.join("summary.json"), &report)?;
        cp.mark(&dir, "sample")?;
        Ok(report)
    }

    pub fn posterior(&self) -> Result<Posterior> {
        if !Checkpoint::load(&self.abc_dir())?.done("sample") {
            return Err(Self::order_error("posterior", "abc/sample"));
        }
        read_json(&self.abc_dir().join("posterior.json"))
    }

    pub fn priors(&self) -> Result<PriorSet> {
        if !Checkpoint::load(&self.abc_dir())?.done("sample") {
            return Err(Self::order_error("priors", "abc/sample"));
        }
        read_json(&self.abc_dir().join("priors.json"))
    }

    fn first_seed_for(&self, store: &RunStore, batch: &str) -> u64 {
        store.batch(batch).next().map_or(store.next_seed(), |r| r.seed)
    }

    /// Simulates posterior draws on fresh seeds and exports quantile bands.
    pub fn ppc(&self) -> Result<PpcReport> {
        let dir = self.dir.join("ppc");
        let mut cp = Checkpoint::load(&dir)?;
        if cp.done("ppc") {
            return read_json(&dir.join("summary.json"));
        }
        let posterior = self.posterior()?;
        create_dir(&dir)?;
        let mut store = self.store()?;
        let first = self.first_seed_for(&store, "ppc");
        let k = self.cfg.ppc.draws;
        let pr = posterior_predictive(
            &posterior,
            &self.space,
            self.cfg.truth.theta,
            k,
            &self.cfg.sim,
            first,
            sub_seed(self.cfg.seed, TAG_PPC),
        )?;
        if !store.has_batch("ppc") {
            let draws = posterior.draws();
            let records = pr
                .runs
                .iter()
                .enumerate()
                .map(|(i, out)| {
                    Ok(RunRecord {
                        seed: pr.seeds[i],
                        batch: "ppc".into(),
                        point_id: pr.draw_index[i],
                        unit: self.space.normalize(&draws[pr.draw_index[i]])?,
                        output: out.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            store.append("ppc", records)?;
        }
        let diag = quantile_bands(&pr.runs, Series::NewDiagnoses)?;
        let deaths = quantile_bands(&pr.runs, Series::NewDeaths)?;
        write_bands_csv(&dir.join("bands.csv"), &[("new_diagnoses", &diag), ("new_deaths", &deaths)])?;
        let mut draws_csv = String::from("draw,seed");
        for n in self.space.names() {
            draws_csv.push_str(&format!(",{n}"));
        }
        draws_csv.push('\n');
        for (i, t) in pr.thetas.iter().enumerate() {
            draws_csv.push_str(&format!("{},{}", pr.draw_index[i], pr.seeds[i]));
            for v in t.to_point(&self.space)? {
                draws_csv.push_str(&format!(",{v}"));
            }
            draws_csv.push('\n');
        }
        write_atomic(&dir.join("draws.csv"), draws_csv.as_bytes())?;
        let obs = self.observed()?;
        let report = PpcReport {
            draws: k,
            first_seed: first,
            last_seed: first + k as u64 - 1,
            coverage_new_diagnoses: diag.coverage90(&obs.series(Series::NewDiagnoses)),
            coverage_new_deaths: deaths.coverage90(&obs.series(Series::NewDeaths)),
        };
        write_json(&dir.join("summary.json"), &report)?;
        cp.mark(&dir, "ppc")?;
        Ok(report)
    }

    /// Paired status-quo versus intervention runs over posterior draws.
    pub fn counterfactual(&self) -> Result<CounterfactualReport> {
        let dir = self.dir.join("counterfactual");
        let mut cp = Checkpoint::load(&dir)?;
        if cp.done("counterfactual") {
            return read_json(&dir.join("summary.json"));
        }
        let posterior = self.posterior()?;
        create_dir(&dir)?;
        let mut store = self.store()?;
        let first = self.first_seed_for(&store, "counterfactual");
        let cc = &self.cfg.counterfactual;
        let cf = intervention_counterfactual(
            &posterior,
            &self.space,
            self.cfg.truth.theta,
            cc.draws,
            &self.cfg.sim,
            cc.intervention.clone(),
            (cc.window[0], cc.window[1]),
            first,
            sub_seed(self.cfg.seed, TAG_CF),
        )?;
        if !store.has_batch("counterfactual") {
            let draws = posterior.draws();
            let records = cf
                .pairs
                .iter()
                .zip(&cf.status_quo_runs)
                .map(|(p, out)| {
                    Ok(RunRecord {
                        seed: p.seed,
                        batch: "counterfactual".into(),
                        point_id: p.draw,
                        unit: self.space.normalize(&draws[p.draw])?,
                        output: out.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            store.append("counterfactual", records)?;
        }
        cf.write_csv(&dir.join("pairs.csv"))?;
        let quo = quantile_bands(&cf.status_quo_runs, Series::ActiveInfections)?;
        let treated = quantile_bands(&cf.intervention_runs, Series::ActiveInfections)?;
        write_bands_csv(
            &dir.join("bands.csv"),
            &[("active_infections_status_quo", &quo), ("active_infections_intervention", &treated)],
        )?;
        let n = cf.pairs.len() as f64;
        let report = CounterfactualReport {
            pairs: cf.pairs.len(),
            first_seed: first,
            window: cc.window,
            mean_status_quo: cf.pairs.iter().map(|p| p.status_quo).sum::<f64>() / n,
            mean_intervention: cf.pairs.iter().map(|p| p.intervention).sum::<f64>() / n,
            mean_reduction: cf.mean_reduction,
            t_statistic: cf.t_statistic,
            p_value: cf.p_value,
        };
        write_json(&dir.join("summary.json"), &report)?;
        cp.mark(&dir, "counterfactual")?;
        Ok(report)
    }

    /// One row per filtered wave; also written to `report.csv`.
    pub fn report(&self) -> Result<Vec<ReportRow>> {
        let mut rows = Vec::new();
        for k in 1..=self.cfg.waves.len() {
            if !self.wave_checkpoint(k)?.done("filter") {
                break;
            }
            let nroy = self.nroy_set(k)?;
            rows.push(ReportRow {
                wave: k,
                targets: self.cfg.waves[k - 1].targets.len(),
                cutoff: self.cfg.waves[k - 1].cutoff,
                nroy_points: nroy.len(),
                volume_percent: 100.0 * volume_fraction(&nroy),
            });
        }
        if rows.is_empty() {
            return Err(Self::order_error("report", "wave_1/filter"));
        }
        let mut text = String::from("wave,targets,cutoff,nroy_points,volume_percent\n");
        for r in &rows {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                r.wave, r.targets, r.cutoff, r.nroy_points, r.volume_percent
            ));
        }
        write_atomic(&self.dir.join("report.csv"), text.as_bytes())?;
        Ok(rows)
    }

    /// Truth (if not yet observed), all waves, ABC, predictive checks,
    /// counterfactual and report.
    pub fn run_all(&self) -> Result<Vec<ReportRow>> {
        if !self.observed_path().exists() {
            self.truth()?;
        }
        self.waves()?;
        self.abc()?;
        self.ppc()?;
        self.counterfactual()?;
        self.report()
    }
}

/// Formats report rows as an aligned text table.
pub fn format_report(rows: &[ReportRow]) -> String {
    let mut s = format!("{:>4}  {:>7}  {:>6}  {:>12}  {:>8}\n", "wave", "targets", "cutoff", "nroy_points", "volume%");
    for r in rows {
        s.push_str(&format!(
            "{:>4}  {:>7}  {:>6.1}  {:>12}  {:>8.2}\n",
            r.wave, r.targets, r.cutoff, r.nroy_points, r.volume_percent
        ));
    }
    s
}
