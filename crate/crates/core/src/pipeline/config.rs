//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::abc::AbcConfig;
use crate::emulator::{FitMode, FitOptions};
use crate::error::{Error, Result};
use crate::history::{validate_schedule, WaveConfig};
use crate::param_space::{CandidateGrid, Dimension, ParameterSpace};
use crate::simulator::{Intervention, SimConfig, TargetSpec, Theta};

/// Shipped configuration; every default lives here.
pub const TEMPLATE: &str = r#"# Global seed for designs, emulator fits and samplers.
seed = 0

[paths]
run_dir = "run"

[grid]
# Levels per dimension of the candidate grid.
m = 40
shard = 4096

[[space]]
name = "beta"
lo = 0.01
hi = 0.08

[[space]]
name = "bc_wc"
lo = 0.0
hi = 1.0

[[space]]
name = "bc_lf"
lo = 0.0
hi = 1.0

[[space]]
name = "tn"
lo = 1.0
hi = 20.0

[truth]
seed = 999
obs_var = 0.0
discrepancy_var = 0.0

[truth.theta]
beta = 0.025
bc_wc = 0.6
bc_lf = 0.5
tn = 5.0

[sim]
n_agents = 2000
horizon = 90
seed_infections = 10
change_day = 21

[sim.disease]
exposed_period = 4.0
infectious_period = 7.0
symptomatic_fraction = 0.6
fatality_fraction = 0.05
base_test_prob = 0.01
diagnosed_transmission = 0.3

[[sim.layers]]
kind = "home"
mean_contacts = 3.0
weight = 1.5

[[sim.layers]]
kind = "school"
mean_contacts = 4.0
weight = 0.6

[[sim.layers]]
kind = "work"
mean_contacts = 6.0
weight = 0.6

[[sim.layers]]
kind = "community"
mean_contacts = 10.0
weight = 0.3

[[sim.layers]]
kind = "ltcf"
mean_contacts = 1.0
weight = 1.0

[design]
lhs_restarts = 20

[emulator]
mode = "joint"
starts = 5
max_iters = 150

[[waves]]
targets = [
    "cumulative_diagnoses@21", "cumulative_diagnoses@45", "cumulative_diagnoses@88",
    "cumulative_deaths@21", "cumulative_deaths@45", "cumulative_deaths@88",
    "active_infections@14", "active_infections@56",
]
cutoff = 3.0
new_points = 50
replicates = 25

[[waves]]
targets = [
    "cumulative_diagnoses@21", "cumulative_diagnoses@45", "cumulative_diagnoses@88",
    "cumulative_deaths@21", "cumulative_deaths@45", "cumulative_deaths@88",
    "active_infections@14", "active_infections@38", "active_infections@56",
    "new_diagnoses_7d@21",
]
cutoff = 3.0
new_points = 50
replicates = 20

[[waves]]
targets = [
    "cumulative_diagnoses@21", "cumulative_diagnoses@45", "cumulative_diagnoses@88",
    "cumulative_deaths@21", "cumulative_deaths@45", "cumulative_deaths@88",
    "active_infections@14", "active_infections@38", "active_infections@56",
    "new_diagnoses_7d@21",
]
cutoff = 2.7
new_points = 50
replicates = 20

[[waves]]
targets = [
    "cumulative_diagnoses@21", "cumulative_diagnoses@45", "cumulative_diagnoses@88",
    "cumulative_deaths@21", "cumulative_deaths@45", "cumulative_deaths@88",
    "active_infections@14", "active_infections@38", "active_infections@56",
    "new_diagnoses_7d@21", "new_diagnoses_7d@45",
]
cutoff = 2.5
new_points = 50
replicates = 20

[abc]
# Replicates per point of the last wave's proposal, simulated to train the ABC emulators.
replicates = 20
# When set, epsilon is this quantile of prior-predictive distances.
pilot_quantile = 0.1
pilot_draws = 2000

[abc.sampler]
epsilon = 5.0
chains = 5
samples = 2000
burn_in = 200
norm = "mean"
targets = [
    "new_diagnoses_7d@7", "new_diagnoses_7d@14", "new_diagnoses_7d@21", "new_diagnoses_7d@28",
    "new_diagnoses_7d@35", "new_diagnoses_7d@42", "new_diagnoses_7d@49", "new_diagnoses_7d@56",
    "new_diagnoses_7d@63", "new_diagnoses_7d@70", "new_diagnoses_7d@77", "new_diagnoses_7d@84",
    "new_deaths_7d@7", "new_deaths_7d@14", "new_deaths_7d@21", "new_deaths_7d@28",
    "new_deaths_7d@35", "new_deaths_7d@42", "new_deaths_7d@49", "new_deaths_7d@56",
    "new_deaths_7d@63", "new_deaths_7d@70", "new_deaths_7d@77", "new_deaths_7d@84",
]

[ppc]
draws = 50

[counterfactual]
draws = 200
window = [75, 89]

[counterfactual.intervention]
start_day = 60
wc_multiplier = 1.0
lf_multiplier = 1.0
test_multiplier = 5.0
test_start_day = 60

[exports]
optical_depth_bins = 10
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub m: usize,
    #[serde(default = "default_shard")]
    pub shard: usize,
}

fn default_shard() -> usize {
    crate::history::DEFAULT_SHARD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub theta: Theta,
    pub seed: u64,
    #[serde(default)]
    pub obs_var: f64,
    #[serde(default)]
    pub discrepancy_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub lhs_restarts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmulatorConfig {
    #[serde(default)]
    pub mode: FitMode,
    pub starts: usize,
    pub max_iters: u64,
}

impl EmulatorConfig {
    pub fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            mode: self.mode,
            starts: self.starts,
            max_iters: self.max_iters,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcStage {
    pub replicates: u32,
    #[serde(default)]
    pub pilot_quantile: Option<f64>,
    #[serde(default = "default_pilot_draws")]
    pub pilot_draws: usize,
    pub sampler: AbcConfig,
}

fn default_pilot_draws() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpcConfig {
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub draws: usize,
    /// Inclusive day range of the compared outcome.
    pub window: [usize; 2],
    pub intervention: Intervention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportConfig {
    pub optical_depth_bins: usize,
}

/// Everything a pipeline run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    pub grid: GridConfig,
    pub space: Vec<Dimension>,
    pub truth: TruthConfig,
    pub sim: SimConfig,
    pub design: DesignConfig,
    pub emulator: EmulatorConfig,
    pub waves: Vec<WaveConfig>,
    pub abc: AbcStage,
    pub ppc: PpcConfig,
    pub counterfactual: CounterfactualConfig,
    pub exports: ExportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::from_toml(TEMPLATE).expect("shipped template is valid")
    }
}

impl PipelineConfig {
    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn space(&self) -> Result<ParameterSpace> {
        ParameterSpace::new(self.space.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<CandidateGrid> {
        CandidateGrid::new(self.space()?, self.grid.m)
    }

    /// Parsed target specs of wave `k` (1-based).
    pub fn wave_specs(&self, k: usize) -> Result<Vec<TargetSpec>> {
        let w = self
            .waves
            .get(k.wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!("no wave {k}; {} configured", self.waves.len())))?;
        w.targets.iter().map(|t| t.parse()).collect()
    }

    /// All wave targets, in first-appearance order.
    pub fn all_wave_specs(&self) -> Result<Vec<TargetSpec>> {
        let mut out: Vec<TargetSpec> = Vec::new();
        for k in 1..=self.waves.len() {
            for s in self.wave_specs(k)? {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        let space = self.space()?;
        for d in space.dims() {
            if !Theta::NAMES.contains(&d.name.as_str()) {
                return cfg_err(format!(
                    "space dimension `{}` is not one of {:?}",
                    d.name,
                    Theta::NAMES
                ));
            }
        }
        if self.grid.m < 2 || self.grid.shard == 0 {
            return cfg_err("grid.m must be >= 2 and grid.shard >= 1".into());
        }
        self.sim.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.truth.theta.validate().map_err(|e| Error::Config(e.to_string()))?;
        let truth = self.truth.theta.to_point(&space)?;
        space
            .normalize(&truth)
            .map_err(|e| Error::Config(format!("truth.theta: {e}")))?;
        for v in [self.truth.obs_var, self.truth.discrepancy_var] {
            if !(v >= 0.0 && v.is_finite()) {
                return cfg_err("truth variances must be finite and >= 0".into());
            }
        }
        if self.design.lhs_restarts == 0 || self.emulator.starts == 0 || self.emulator.max_iters == 0 {
            return cfg_err("lhs_restarts, emulator starts and max_iters must be positive".into());
        }
        validate_schedule(&self.waves)?;
        let horizon = self.sim.horizon;
        let check_specs = |what: &str, specs: &[TargetSpec]| -> Result<()> {
            if let Some(s) = specs.iter().find(|s| s.day >= horizon) {
                return Err(Error::Config(format!("{what}: target `{s}` is past the {horizon}-day horizon")));
            }
            Ok(())
        };
        for k in 1..=self.waves.len() {
            let specs = self.wave_specs(k).map_err(|e| Error::Config(format!("wave {k}: {e}")))?;
            check_specs(&format!("wave {k}"), &specs)?;
        }
        self.abc.sampler.validate(space.len())?;
        check_specs("abc", &self.abc.sampler.targets)?;
        if self.abc.replicates == 0 || self.abc.pilot_draws == 0 {
            return cfg_err("abc replicates and pilot_draws must be positive".into());
        }
        if let Some(q) = self.abc.pilot_quantile {
            if !(q > 0.0 && q < 1.0) {
                return cfg_err("abc.pilot_quantile must lie in (0, 1)".into());
            }
        }
        if self.ppc.draws == 0 || self.counterfactual.draws == 0 {
            return cfg_err("ppc and counterfactual draws must be positive".into());
        }
        let [a, b] = self.counterfactual.window;
        if a > b || b >= horizon {
            return cfg_err(format!("counterfactual window [{a}, {b}] must fit the {horizon}-day horizon"));
        }
        let mut treated = self.sim.clone();
        treated.intervention = Some(self.counterfactual.intervention.clone());
        treated
            .validate()
            .map_err(|e| Error::Config(format!("counterfactual.intervention: {e}")))?;
        if self.exports.optical_depth_bins == 0 {
            return cfg_err("exports.optical_depth_bins must be positive".into());
        }
        Ok(())
    }
}
