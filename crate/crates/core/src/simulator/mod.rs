//! Desk-scale stochastic SEIRD agent-based epidemic simulator.
//!
//! Agents mix over static layered contact networks and progress through
//! susceptible, exposed, infectious, recovered and dead states in a daily
//! loop. Infectious agents are diagnosed by a symptom-dependent testing
//! process, which is what the calibration targets observe.

mod network;
pub(crate) mod rng;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::ParameterSpace;

pub use network::ContactNetwork;
pub use rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Home,
    Work,
    School,
    Community,
    Ltcf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub kind: LayerKind,
    pub mean_contacts: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiseaseConfig {
    /// Mean days spent exposed before becoming infectious.
    pub exposed_period: f64,
    /// Mean days spent infectious.
    pub infectious_period: f64,
    pub symptomatic_fraction: f64,
    /// Probability that a symptomatic infection ends in death.
    pub fatality_fraction: f64,
    /// Daily probability that an infectious, non-symptomatic agent is tested.
    pub base_test_prob: f64,
    /// Relative transmissibility of an agent after diagnosis.
    pub diagnosed_transmission: f64,
}

/// Changes layered on top of the calibrated dynamics from given days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intervention {
    pub start_day: usize,
    #[serde(default = "one")]
    pub wc_multiplier: f64,
    #[serde(default = "one")]
    pub lf_multiplier: f64,
    #[serde(default = "one")]
    pub test_multiplier: f64,
    pub test_start_day: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_agents: usize,
    pub horizon: usize,
    pub layers: Vec<LayerConfig>,
    pub disease: DiseaseConfig,
    pub seed_infections: usize,
    /// Day from which `bc_wc` and `bc_lf` scale work/community and ltcf transmission.
    pub change_day: usize,
    #[serde(default)]
    pub intervention: Option<Intervention>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_agents: 2000,
            horizon: 90,
            layers: vec![
                LayerConfig {
                    kind: LayerKind::Home,
                    mean_contacts: 3.0,
                    weight: 1.5,
                },
                LayerConfig {
                    kind: LayerKind::School,
                    mean_contacts: 4.0,
                    weight: 0.6,
                },
                LayerConfig {
                    kind: LayerKind::Work,
                    mean_contacts: 6.0,
                    weight: 0.6,
                },
                LayerConfig {
                    kind: LayerKind::Community,
                    mean_contacts: 10.0,
                    weight: 0.3,
                },
                LayerConfig {
                    kind: LayerKind::Ltcf,
                    mean_contacts: 1.0,
                    weight: 1.0,
                },
            ],
            disease: DiseaseConfig {
                exposed_period: 4.0,
                infectious_period: 7.0,
                symptomatic_fraction: 0.6,
                fatality_fraction: 0.05,
                base_test_prob: 0.01,
                diagnosed_transmission: 0.3,
            },
            seed_infections: 10,
            change_day: 21,
            intervention: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSimConfig(m));
        if self.n_agents == 0 {
            return bad("n_agents must be positive".into());
        }
        if self.n_agents > u32::MAX as usize {
            return bad("n_agents too large".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.seed_infections > self.n_agents {
            return bad("seed_infections exceeds n_agents".into());
        }
        for l in &self.layers {
            if !(l.mean_contacts >= 0.0 && l.mean_contacts.is_finite()) {
                return bad(format!("layer {:?} has invalid mean_contacts", l.kind));
            }
            if !(l.weight >= 0.0 && l.weight.is_finite()) {
                return bad(format!("layer {:?} has invalid weight", l.kind));
            }
        }
        let d = &self.disease;
        if !(d.exposed_period > 0.0 && d.infectious_period > 0.0) {
            return bad("disease periods must be > 0".into());
        }
        for (name, v) in [
            ("symptomatic_fraction", d.symptomatic_fraction),
            ("fatality_fraction", d.fatality_fraction),
            ("base_test_prob", d.base_test_prob),
            ("diagnosed_transmission", d.diagnosed_transmission),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if let Some(iv) = &self.intervention {
            for (name, v) in [
                ("wc_multiplier", iv.wc_multiplier),
                ("lf_multiplier", iv.lf_multiplier),
                ("test_multiplier", iv.test_multiplier),
            ] {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("intervention {name} must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// The four calibrated simulator inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theta {
    /// Per-contact, per-day transmission probability.
    pub beta: f64,
    /// Work and community transmission multiplier from the change day.
    pub bc_wc: f64,
    /// Long-term-care transmission multiplier from the change day.
    pub bc_lf: f64,
    /// Odds ratio of testing for symptomatic versus other infectious agents.
    pub tn: f64,
}

impl Theta {
    pub const NAMES: [&'static str; 4] = ["beta", "bc_wc", "bc_lf", "tn"];

    pub fn validate(&self) -> Result<()> {
        let check = |name, value: f64, ok: bool, reason| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidTheta {
                    name,
                    value,
                    reason,
                })
            }
        };
        check("beta", self.beta, (0.0..1.0).contains(&self.beta), "must lie in [0, 1)")?;
        check("bc_wc", self.bc_wc, (0.0..=1.0).contains(&self.bc_wc), "must lie in [0, 1]")?;
        check("bc_lf", self.bc_lf, (0.0..=1.0).contains(&self.bc_lf), "must lie in [0, 1]")?;
        check("tn", self.tn, self.tn >= 1.0, "must be >= 1")
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "beta" => Some(self.beta),
            "bc_wc" => Some(self.bc_wc),
            "bc_lf" => Some(self.bc_lf),
            "tn" => Some(self.tn),
            _ => None,
        }
    }

    fn set(&mut self, name: &str, v: f64) -> bool {
        match name {
            "beta" => self.beta = v,
            "bc_wc" => self.bc_wc = v,
            "bc_lf" => self.bc_lf = v,
            "tn" => self.tn = v,
            _ => return false,
        }
        true
    }

    /// Builds a theta from a native-unit point of `space`, taking dimensions
    /// the space does not contain from `base`.
    pub fn from_point(space: &ParameterSpace, x: &[f64], base: Theta) -> Result<Theta> {
        if x.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                got: x.len(),
            });
        }
        let mut t = base;
        for (dim, &v) in space.dims().iter().zip(x) {
            if !t.set(&dim.name, v) {
                return Err(Error::InvalidSpace(format!(
                    "dimension `{}` is not a simulator parameter",
                    dim.name
                )));
            }
        }
        Ok(t)
    }

    /// Native-unit coordinates of this theta in `space`.
    pub fn to_point(&self, space: &ParameterSpace) -> Result<Vec<f64>> {
        space
            .names()
            .map(|n| {
                self.get(n).ok_or_else(|| {
                    Error::InvalidSpace(format!("dimension `{n}` is not a simulator parameter"))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Compartment {
    Susceptible,
    Exposed,
    Infectious,
    Recovered,
    Dead,
}

/// Daily output series of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutput {
    pub new_diagnoses: Vec<u32>,
    pub new_deaths: Vec<u32>,
    /// Exposed plus infectious agents at the end of each day.
    pub active_infections: Vec<u32>,
    pub cumulative_diagnoses: Vec<u32>,
    pub cumulative_deaths: Vec<u32>,
}

impl RunOutput {
    /// Assembles an output from its daily series, deriving the cumulative ones.
    pub fn from_daily(new_diagnoses: Vec<u32>, new_deaths: Vec<u32>, active_infections: Vec<u32>) -> Result<Self> {
        let n = new_diagnoses.len();
        if new_deaths.len() != n || active_infections.len() != n {
            return Err(Error::InvalidArgument("daily series differ in length".into()));
        }
        let running = |v: &[u32]| {
            v.iter()
                .scan(0u32, |acc, &x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect::<Vec<u32>>()
        };
        Ok(RunOutput {
            cumulative_diagnoses: running(&new_diagnoses),
            cumulative_deaths: running(&new_deaths),
            new_diagnoses,
            new_deaths,
            active_infections,
        })
    }

    pub fn horizon(&self) -> usize {
        self.new_diagnoses.len()
    }

    /// The named series as reals; weekly variants are smoothed.
    pub fn series(&self, s: Series) -> Vec<f64> {
        let raw = |v: &[u32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        match s {
            Series::NewDiagnoses => raw(&self.new_diagnoses),
            Series::NewDeaths => raw(&self.new_deaths),
            Series::ActiveInfections => raw(&self.active_infections),
            Series::CumulativeDiagnoses => raw(&self.cumulative_diagnoses),
            Series::CumulativeDeaths => raw(&self.cumulative_deaths),
            Series::NewDiagnosesWeekly => smooth_weekly(&raw(&self.new_diagnoses)),
            Series::NewDeathsWeekly => smooth_weekly(&raw(&self.new_deaths)),
        }
    }
}

/// Output series addressable by calibration targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Series {
    NewDiagnoses,
    NewDeaths,
    ActiveInfections,
    CumulativeDiagnoses,
    CumulativeDeaths,
    /// Centered 7-day moving average of daily diagnoses.
    NewDiagnosesWeekly,
    /// Centered 7-day moving average of daily deaths.
    NewDeathsWeekly,
}

impl Series {
    pub const ALL: [Series; 7] = [
        Series::NewDiagnoses,
        Series::NewDeaths,
        Series::ActiveInfections,
        Series::CumulativeDiagnoses,
        Series::CumulativeDeaths,
        Series::NewDiagnosesWeekly,
        Series::NewDeathsWeekly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Series::NewDiagnoses => "new_diagnoses",
            Series::NewDeaths => "new_deaths",
            Series::ActiveInfections => "active_infections",
            Series::CumulativeDiagnoses => "cumulative_diagnoses",
            Series::CumulativeDeaths => "cumulative_deaths",
            Series::NewDiagnosesWeekly => "new_diagnoses_7d",
            Series::NewDeathsWeekly => "new_deaths_7d",
        }
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Series {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Series::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::UnknownSeries(s.to_string()))
    }
}

impl Serialize for Series {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Series {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A `(series, day)` extraction, written `series@day`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetSpec {
    pub series: Series,
    pub day: usize,
}

impl TargetSpec {
    pub fn new(series: Series, day: usize) -> Self {
        TargetSpec { series, day }
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.series, self.day)
    }
}

impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (series, day) = s
            .split_once('@')
            .ok_or_else(|| Error::InvalidArgument(format!("target `{s}` is not `series@day`")))?;
        let day = day
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad day in target `{s}`")))?;
        Ok(TargetSpec {
            series: series.trim().parse()?,
            day,
        })
    }
}

impl Serialize for TargetSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TargetSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Values of the requested `(series, day)` pairs, in order.
pub fn extract_targets(out: &RunOutput, spec: &[TargetSpec]) -> Result<Vec<f64>> {
    let mut cache: Vec<(Series, Vec<f64>)> = Vec::new();
    spec.iter()
        .map(|t| {
            if t.day >= out.horizon() {
                return Err(Error::IndexOutOfRange {
                    index: t.day as u64,
                    len: out.horizon() as u64,
                });
            }
            let pos = match cache.iter().position(|(s, _)| *s == t.series) {
                Some(p) => p,
                None => {
                    cache.push((t.series, out.series(t.series)));
                    cache.len() - 1
                }
            };
            Ok(cache[pos].1[t.day])
        })
        .collect()
}

/// Centered 7-day moving average, averaging over the available days at the edges.
pub fn smooth_weekly(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(3);
            let hi = (t + 3).min(n.saturating_sub(1));
            let window = &series[lo..=hi];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

/// One in-progress simulation, advanced a day at a time.
pub struct Simulation<'a> {
    cfg: &'a SimConfig,
    theta: Theta,
    seed: u64,
    networks: Vec<(LayerConfig, ContactNetwork)>,
    state: Vec<Compartment>,
    symptomatic: Vec<bool>,
    diagnosed: Vec<bool>,
    newly_exposed: Vec<bool>,
    day: usize,
    new_diagnoses: Vec<u32>,
    new_deaths: Vec<u32>,
    active: Vec<u32>,
}

impl<'a> Simulation<'a> {
    /// Sets up a run with random layered networks and randomly chosen seed infections.
    pub fn new(theta: Theta, seed: u64, cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate()?;
        theta.validate()?;
        let networks = cfg
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    l.clone(),
                    ContactNetwork::random_regular(cfg.n_agents, l.mean_contacts, seed, i as u64),
                )
            })
            .collect();
        let mut rng = rng::stream(seed, 0, 0, rng::TAG_SEEDING);
        let initial = rand::seq::index::sample(&mut rng, cfg.n_agents, cfg.seed_infections).into_vec();
        Self::with_networks(theta, seed, cfg, networks, &initial)
    }

    /// Sets up a run on explicit networks, one per entry, with the given agents infectious.
    pub fn with_networks(
        theta: Theta,
        seed: u64,
        cfg: &'a SimConfig,
        networks: Vec<(LayerConfig, ContactNetwork)>,
        initial_infectious: &[usize],
    ) -> Result<Self> {
        cfg.validate()?;
        theta.validate()?;
        let n = cfg.n_agents;
        if networks.iter().any(|(_, net)| net.n_agents() != n) {
            return Err(Error::InvalidSimConfig("network size differs from n_agents".into()));
        }
        let mut state = vec![Compartment::Susceptible; n];
        let mut symptomatic = vec![false; n];
        let mut rng = rng::stream(seed, 1, 0, rng::TAG_SEEDING);
        for &a in initial_infectious {
            if a >= n {
                return Err(Error::IndexOutOfRange {
                    index: a as u64,
                    len: n as u64,
                });
            }
            state[a] = Compartment::Infectious;
            symptomatic[a] = rng.random::<f64>() < cfg.disease.symptomatic_fraction;
        }
        Ok(Simulation {
            cfg,
            theta,
            seed,
            networks,
            state,
            symptomatic,
            diagnosed: vec![false; n],
            newly_exposed: vec![false; n],
            day: 0,
            new_diagnoses: Vec::with_capacity(cfg.horizon),
            new_deaths: Vec::with_capacity(cfg.horizon),
            active: Vec::with_capacity(cfg.horizon),
        })
    }

    pub fn day(&self) -> usize {
        self.day
    }

    pub fn state(&self) -> &[Compartment] {
        &self.state
    }

    /// Counts per compartment in S, E, I, R, D order.
    pub fn compartments(&self) -> [usize; 5] {
        let mut c = [0usize; 5];
        for &s in &self.state {
            c[s as usize] += 1;
        }
        c
    }

    fn layer_multiplier(&self, kind: LayerKind, day: usize) -> f64 {
        let mut m = 1.0;
        if day >= self.cfg.change_day {
            match kind {
                LayerKind::Work | LayerKind::Community => m *= self.theta.bc_wc,
                LayerKind::Ltcf => m *= self.theta.bc_lf,
                _ => {}
            }
        }
        if let Some(iv) = &self.cfg.intervention {
            if day >= iv.start_day {
                match kind {
                    LayerKind::Work | LayerKind::Community => m *= iv.wc_multiplier,
                    LayerKind::Ltcf => m *= iv.lf_multiplier,
                    _ => {}
                }
            }
        }
        m
    }

    /// Daily test probabilities for (non-symptomatic, symptomatic) infectious agents.
    pub fn test_probabilities(&self, day: usize) -> (f64, f64) {
        let mut p = self.cfg.disease.base_test_prob;
        if let Some(iv) = &self.cfg.intervention {
            if day >= iv.test_start_day {
                p *= iv.test_multiplier;
            }
        }
        let p = p.clamp(0.0, 1.0);
        if p >= 1.0 {
            return (1.0, 1.0);
        }
        let odds = self.theta.tn * p / (1.0 - p);
        (p, odds / (1.0 + odds))
    }

    /// Advances one day and returns that day's (diagnoses, deaths, active infections).
    pub fn step(&mut self) -> (u32, u32, u32) {
        let day = self.day;
        let d = &self.cfg.disease;
        let p_recover = (1.0 / d.infectious_period).min(1.0);
        let p_onset = (1.0 / d.exposed_period).min(1.0);
        let (p_test_asym, p_test_sym) = self.test_probabilities(day);
        let layer_p: Vec<f64> = self
            .networks
            .iter()
            .map(|(l, _)| self.theta.beta * l.weight * self.layer_multiplier(l.kind, day))
            .collect();

        let mut diagnoses = 0u32;
        let mut deaths = 0u32;
        let start = self.state.clone();
        for agent in 0..start.len() {
            match start[agent] {
                Compartment::Infectious => {
                    let mut rng = rng::stream(self.seed, agent as u64, day as u64, rng::TAG_AGENT);
                    let u_test: f64 = rng.random();
                    let u_remove: f64 = rng.random();
                    let u_death: f64 = rng.random();
                    let iso = if self.diagnosed[agent] {
                        d.diagnosed_transmission
                    } else {
                        1.0
                    };
                    for ((_, net), &p) in self.networks.iter().zip(&layer_p) {
                        let p = (p * iso).min(1.0);
                        for &c in net.contacts(agent) {
                            let u: f64 = rng.random();
                            if u < p && start[c as usize] == Compartment::Susceptible {
                                self.newly_exposed[c as usize] = true;
                            }
                        }
                    }
                    if !self.diagnosed[agent] {
                        let p = if self.symptomatic[agent] {
                            p_test_sym
                        } else {
                            p_test_asym
                        };
                        if u_test < p {
                            self.diagnosed[agent] = true;
                            diagnoses += 1;
                        }
                    }
                    if u_remove < p_recover {
                        if self.symptomatic[agent] && u_death < d.fatality_fraction {
                            self.state[agent] = Compartment::Dead;
                            deaths += 1;
                        } else {
                            self.state[agent] = Compartment::Recovered;
                        }
                    }
                }
                Compartment::Exposed => {
                    let mut rng = rng::stream(self.seed, agent as u64, day as u64, rng::TAG_AGENT);
                    let u_onset: f64 = rng.random();
                    let u_symptoms: f64 = rng.random();
                    if u_onset < p_onset {
                        self.state[agent] = Compartment::Infectious;
                        self.symptomatic[agent] = u_symptoms < d.symptomatic_fraction;
                    }
                }
                _ => {}
            }
        }
        let mut active = 0u32;
        for agent in 0..self.state.len() {
            if std::mem::take(&mut self.newly_exposed[agent]) {
                self.state[agent] = Compartment::Exposed;
            }
            if matches!(self.state[agent], Compartment::Exposed | Compartment::Infectious) {
                active += 1;
            }
        }
        self.new_diagnoses.push(diagnoses);
        self.new_deaths.push(deaths);
        self.active.push(active);
        self.day += 1;
        (diagnoses, deaths, active)
    }

    pub fn finish(mut self) -> RunOutput {
        while self.day < self.cfg.horizon {
            self.step();
        }
        RunOutput::from_daily(self.new_diagnoses, self.new_deaths, self.active)
            .expect("series grow in lockstep")
    }
}

/// Runs the simulator to the configured horizon.
///
/// The result is a pure function of `(theta, seed, cfg)`.
pub fn run(theta: Theta, seed: u64, cfg: &SimConfig) -> Result<RunOutput> {
    Ok(Simulation::new(theta, seed, cfg)?.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> Theta {
        Theta {
            beta: 0.03,
            bc_wc: 0.5,
            bc_lf: 0.5,
            tn: 10.0,
        }
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = SimConfig::default();
        let a = run(theta(), 17, &cfg).unwrap();
        let b = run(theta(), 17, &cfg).unwrap();
        assert_eq!(a, b);
        let c = run(theta(), 18, &cfg).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.horizon(), 90);
    }

    #[test]
    fn zero_transmission_limits_to_seed_cohort() {
        let cfg = SimConfig::default();
        let t = Theta { beta: 0.0, ..theta() };
        for seed in 0..5 {
            let out = run(t, seed, &cfg).unwrap();
            assert!(out.active_infections.iter().all(|&a| a as usize <= cfg.seed_infections));
            assert!(*out.cumulative_diagnoses.last().unwrap() as usize <= cfg.seed_infections);
        }
    }

    #[test]
    fn odds_ratio_one_equalizes_tests() {
        let cfg = SimConfig::default();
        let t = Theta { tn: 1.0, ..theta() };
        let sim = Simulation::new(t, 0, &cfg).unwrap();
        let (a, s) = sim.test_probabilities(0);
        assert_eq!(a, s);
        let sim = Simulation::new(theta(), 0, &cfg).unwrap();
        let (a, s) = sim.test_probabilities(0);
        let odds = |p: f64| p / (1.0 - p);
        assert!((odds(s) / odds(a) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn conservation_and_cumulative_invariants() {
        let cfg = SimConfig::default();
        let mut sim = Simulation::new(theta(), 3, &cfg).unwrap();
        for _ in 0..cfg.horizon {
            sim.step();
            assert_eq!(sim.compartments().iter().sum::<usize>(), cfg.n_agents);
        }
        let out = sim.finish();
        assert!(out.cumulative_diagnoses.windows(2).all(|w| w[0] <= w[1]));
        assert!(out.cumulative_deaths.windows(2).all(|w| w[0] <= w[1]));
        assert!(out.active_infections.iter().all(|&a| a as usize <= cfg.n_agents));
        let sum: u32 = out.new_deaths.iter().sum();
        assert_eq!(*out.cumulative_deaths.last().unwrap(), sum);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let cfg = SimConfig::default();
        assert!(run(Theta { tn: 0.5, ..theta() }, 0, &cfg).is_err());
        assert!(run(Theta { beta: 1.5, ..theta() }, 0, &cfg).is_err());
        let bad = SimConfig {
            horizon: 0,
            ..SimConfig::default()
        };
        assert!(matches!(run(theta(), 0, &bad), Err(Error::InvalidSimConfig(_))));
    }

    /// One infectious agent with k susceptible contacts on a single layer: new
    /// infections after one day are Binomial(k, beta * weight).
    #[test]
    fn one_step_transmission_matches_binomial() {
        let k = 12usize;
        let beta = 0.05;
        let weight = 0.8;
        let cfg = SimConfig {
            n_agents: k + 1,
            horizon: 1,
            layers: vec![LayerConfig {
                kind: LayerKind::Home,
                mean_contacts: 0.0,
                weight,
            }],
            seed_infections: 1,
            ..SimConfig::default()
        };
        let edges: Vec<(u32, u32)> = (1..=k as u32).map(|j| (0, j)).collect();
        let net = ContactNetwork::from_edges(k + 1, &edges);
        let t = Theta {
            beta,
            ..theta()
        };
        let seeds = 10_000u64;
        let mut total = 0.0;
        for seed in 0..seeds {
            let mut sim =
                Simulation::with_networks(t, seed, &cfg, vec![(cfg.layers[0].clone(), net.clone())], &[0])
                    .unwrap();
            sim.step();
            total += sim.state()[1..]
                .iter()
                .filter(|&&s| s == Compartment::Exposed)
                .count() as f64;
        }
        let p = beta * weight;
        let expected = k as f64 * p;
        let se = (k as f64 * p * (1.0 - p) / seeds as f64).sqrt();
        let mean = total / seeds as f64;
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} vs {expected} (se {se})");
    }

    #[test]
    fn extract_examples() {
        let out = RunOutput::from_daily(vec![1, 0, 2], vec![0, 3, 4], vec![5, 6, 7]).unwrap();
        let spec = [TargetSpec::new(Series::CumulativeDeaths, 2)];
        assert_eq!(extract_targets(&out, &spec).unwrap(), vec![7.0]);
        assert!(extract_targets(&out, &[]).unwrap().is_empty());
        assert!(extract_targets(&out, &[TargetSpec::new(Series::NewDeaths, 3)]).is_err());
        assert!("nope@3".parse::<TargetSpec>().is_err());
        let t: TargetSpec = "active_infections@14".parse().unwrap();
        assert_eq!(t, TargetSpec::new(Series::ActiveInfections, 14));
        assert_eq!(t.to_string(), "active_infections@14");
    }

    #[test]
    fn wave_one_target_vector_has_eight_entries() {
        let out = run(theta(), 0, &SimConfig::default()).unwrap();
        let spec: Vec<TargetSpec> = [
            "cumulative_diagnoses@21",
            "cumulative_diagnoses@45",
            "cumulative_diagnoses@88",
            "cumulative_deaths@21",
            "cumulative_deaths@45",
            "cumulative_deaths@88",
            "active_infections@14",
            "active_infections@56",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
        assert_eq!(extract_targets(&out, &spec).unwrap().len(), 8);
    }

    #[test]
    fn smoothing_examples() {
        assert_eq!(smooth_weekly(&[4.0; 10]), vec![4.0; 10]);

        let mut impulse = vec![0.0; 15];
        impulse[7] = 1.0;
        let s = smooth_weekly(&impulse);
        for (t, v) in s.iter().enumerate() {
            let expected = if (4..=10).contains(&t) { 1.0 / 7.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-15, "t={t}");
        }

        let ramp: Vec<f64> = (0..20).map(|t| 2.0 * t as f64 + 1.0).collect();
        let s = smooth_weekly(&ramp);
        for t in 3..17 {
            assert!((s[t] - ramp[t]).abs() < 1e-12);
        }
        assert_eq!(smooth_weekly(&[5.0]), vec![5.0]);
    }
}
