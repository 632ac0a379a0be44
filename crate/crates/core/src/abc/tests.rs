use super::*;
use crate::param_space::{CandidateGrid, Dimension};
use crate::simulator::{RunOutput, SimConfig};
use rand::Rng;
use proptest::prelude::*;

fn line_space(lo: f64, hi: f64) -> ParameterSpace {
    ParameterSpace::new(vec![Dimension::new("x", lo, hi)]).unwrap()
}

fn normal_prior(mean: f64, sd: f64, lo: f64, hi: f64) -> PriorSet {
    PriorSet {
        space: line_space(lo, hi),
        marginals: vec![TruncatedNormal::new(mean, sd, lo, hi).unwrap()],
        floored: vec![],
    }
}

/// y = theta + sigma * z
struct NoisyIdentity {
    sigma: f64,
}

impl Surrogate for NoisyIdentity {
    fn output_len(&self) -> usize {
        1
    }

    fn sample(&self, theta: &[f64], rng: &mut Pcg64Mcg) -> Result<Vec<f64>> {
        let z: f64 = rng.sample(StandardNormal);
        Ok(vec![theta[0] + self.sigma * z])
    }
}

struct Exact;

impl Surrogate for Exact {
    fn output_len(&self) -> usize {
        1
    }

    fn sample(&self, theta: &[f64], _: &mut Pcg64Mcg) -> Result<Vec<f64>> {
        Ok(theta.to_vec())
    }
}

fn toy_config(epsilon: f64, chains: usize, samples: usize, burn_in: usize) -> AbcConfig {
    AbcConfig {
        epsilon,
        chains,
        samples,
        burn_in,
        ..AbcConfig::default()
    }
}

fn ks_distance(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn truncated_normal_samples_follow_its_cdf() {
    let mut rng = seeded(3, 0);
    for tn in [
        TruncatedNormal::new(0.3, 0.2, 0.0, 1.0).unwrap(),
        TruncatedNormal::new(5.0, 1.0, 0.0, 1.0).unwrap(),
        TruncatedNormal::new(-4.0, 0.5, 0.0, 1.0).unwrap(),
    ] {
        let x: Vec<f64> = (0..5000).map(|_| tn.sample(&mut rng)).collect();
        assert!(x.iter().all(|v| (tn.lo..=tn.hi).contains(v)));
        assert!(ks_distance(x, |v| tn.cdf(v)) < 0.03, "{tn:?}");
    }
}

#[test]
fn truncated_normal_density_integrates_to_one() {
    let tn = TruncatedNormal::new(0.8, 0.3, 0.0, 1.0).unwrap();
    let n = 20_000;
    let h = 1.0 / n as f64;
    let area: f64 = (0..n).map(|i| tn.ln_pdf((i as f64 + 0.5) * h).exp() * h).sum();
    assert!((area - 1.0).abs() < 1e-6, "{area}");
    assert_eq!(tn.ln_pdf(1.5), f64::NEG_INFINITY);
}

#[test]
fn truncated_normal_rejects_bad_parameters() {
    assert!(TruncatedNormal::new(0.0, 0.0, 0.0, 1.0).is_err());
    assert!(TruncatedNormal::new(0.0, 1.0, 1.0, 1.0).is_err());
    assert!(TruncatedNormal::new(f64::NAN, 1.0, 0.0, 1.0).is_err());
}

#[test]
fn priors_from_two_points() {
    let grid = CandidateGrid::new(line_space(0.0, 1.0), 6).unwrap();
    let nroy = NroySet::new(grid, vec![2, 3], vec![0.0, 0.0], 3.0).unwrap();
    let p = fit_priors(&nroy).unwrap();
    let m = p.marginals[0];
    assert!((m.mean - 0.5).abs() < 1e-12);
    let sd = ((0.1f64.powi(2) * 2.0) / 1.0).sqrt();
    assert!((m.sd - sd).abs() < 1e-12);
    assert_eq!((m.lo, m.hi), (0.0, 1.0));
    assert!(p.floored.is_empty());
}

#[test]
fn priors_from_full_uniform_grid() {
    let m = 101usize;
    let grid = CandidateGrid::new(line_space(0.0, 1.0), m).unwrap();
    let p = fit_priors(&NroySet::full(grid)).unwrap();
    let mf = m as f64;
    // sample variance of {k / (m - 1)}
    let var = mf * (mf + 1.0) / (12.0 * (mf - 1.0).powi(2));
    assert!((p.marginals[0].mean - 0.5).abs() < 1e-12);
    assert!((p.marginals[0].sd - var.sqrt()).abs() < 1e-12);
    assert!((p.marginals[0].sd - 1.0 / 12f64.sqrt()).abs() < 0.01);
}

#[test]
fn degenerate_prior_dimension_is_floored() {
    let space = ParameterSpace::new(vec![Dimension::new("a", 0.0, 2.0), Dimension::new("b", 1.0, 5.0)]).unwrap();
    let grid = CandidateGrid::new(space, 5).unwrap();
    // all points share the first coordinate level
    let nroy = NroySet::new(grid, vec![5, 6, 8], vec![1.0; 3], 3.0).unwrap();
    let p = fit_priors(&nroy).unwrap();
    assert_eq!(p.floored, vec!["a".to_string()]);
    assert!((p.marginals[0].sd - 2e-3).abs() < 1e-15);
    assert!((p.marginals[0].mean - 0.5).abs() < 1e-12);
    assert!(p.marginals[1].sd > 1.0);
}

#[test]
fn priors_need_two_points() {
    let grid = CandidateGrid::new(line_space(0.0, 1.0), 6).unwrap();
    let nroy = NroySet::new(grid, vec![2], vec![0.0], 3.0).unwrap();
    assert!(matches!(fit_priors(&nroy), Err(Error::InsufficientData(_))));
}

#[test]
fn distance_weight_examples() {
    assert_eq!(distance_weight(&[1.0, 2.0], &[1.0, 2.0], 5.0).unwrap(), 1.0);
    assert!((distance_weight(&[5.0], &[0.0], 5.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
    let w = distance_weight(&[3.0, 4.0], &[0.0, 0.0], 5.0).unwrap();
    let oracle = {
        let s: f64 = [3.0f64, 4.0].iter().map(|d| d * d).sum();
        (-s / (2.0 * 25.0 * 2.0)).exp()
    };
    assert!((w - oracle).abs() < 1e-15);
    assert!((w - (-0.25f64).exp()).abs() < 1e-15);
    assert!(matches!(
        distance_weight(&[1.0], &[1.0, 2.0], 1.0),
        Err(Error::DimensionMismatch { .. })
    ));
    assert!(distance_weight(&[1.0], &[1.0], 0.0).is_err());
}

#[test]
fn distance_norms() {
    let (s, o) = ([3.0, 4.0], [0.0, 0.0]);
    assert_eq!(squared_distance(&s, &o, DistanceNorm::Mean).unwrap(), 12.5);
    assert_eq!(squared_distance(&s, &o, DistanceNorm::Sum).unwrap(), 25.0);
    assert_eq!(squared_distance(&s, &o, DistanceNorm::Max).unwrap(), 16.0);
}

proptest! {
    #[test]
    fn distance_weight_symmetric_and_decreasing(
        a in prop::collection::vec(-50.0f64..50.0, 1..8),
        shift in prop::collection::vec(-20.0f64..20.0, 8),
        k in 0usize..8,
        bump in 0.01f64..5.0,
        eps in 0.5f64..20.0,
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let w = distance_weight(&a, &b, eps).unwrap();
        prop_assert_eq!(w, distance_weight(&b, &a, eps).unwrap());
        prop_assert!(w > 0.0 && w <= 1.0);
        let k = k % a.len();
        let dir = if b[k] >= a[k] { 1.0 } else { -1.0 };
        let mut far = b.clone();
        far[k] += dir * bump;
        let w_far = distance_weight(&a, &far, eps).unwrap();
        prop_assert!(w_far <= w);
        if w > 1e-300 {
            prop_assert!(w_far < w);
        }
    }
}

#[test]
fn vacuous_kernel_returns_the_prior() {
    let prior = normal_prior(0.3, 0.25, 0.0, 1.0);
    let cfg = toy_config(1e9, 5, 2000, 50);
    let post = abc_sample(&prior, &NoisyIdentity { sigma: 1.0 }, &[0.9], &cfg, 11).unwrap();
    let draws: Vec<f64> = post.draws().iter().map(|d| d[0]).collect();
    assert_eq!(draws.len(), 10_000);
    let tn = prior.marginals[0];
    let ks = ks_distance(draws, |v| tn.cdf(v));
    assert!(ks < 0.05, "KS {ks}");
}

fn batch_means_se(chains: &[Vec<f64>], batch: usize) -> f64 {
    let mut means = Vec::new();
    for c in chains {
        for b in c.chunks_exact(batch) {
            means.push(b.iter().sum::<f64>() / batch as f64);
        }
    }
    let n = means.len() as f64;
    let m = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

fn conjugate_check(proposal_scale: Option<Vec<f64>>, seed: u64) {
    let (m0, s0, sigma, eps, y) = (1.0, 2.0, 0.7, 1.0, 3.5);
    let prior = normal_prior(m0, s0, m0 - 12.0 * s0, m0 + 12.0 * s0);
    let cfg = AbcConfig {
        proposal_scale,
        ..toy_config(eps, 5, 4000, 200)
    };
    let post = abc_sample(&prior, &NoisyIdentity { sigma }, &[y], &cfg, seed).unwrap();
    let chains: Vec<Vec<f64>> = post
        .chains
        .iter()
        .map(|c| c.steps[post.burn_in..].iter().map(|s| s.theta[0]).collect())
        .collect();
    let all: Vec<f64> = chains.concat();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let tau = sigma * sigma + eps * eps;
    let oracle = (m0 / (s0 * s0) + y / tau) / (1.0 / (s0 * s0) + 1.0 / tau);
    let se = batch_means_se(&chains, 200);
    assert!((mean - oracle).abs() < 3.0 * se, "mean {mean} oracle {oracle} se {se}");
    let post_sd = (1.0 / (1.0 / (s0 * s0) + 1.0 / tau)).sqrt();
    let sd = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
    assert!((sd / post_sd - 1.0).abs() < 0.1, "sd {sd} vs {post_sd}");
}

#[test]
fn conjugate_posterior_mean() {
    conjugate_check(None, 5);
}

#[test]
fn conjugate_posterior_mean_with_widened_proposal() {
    conjugate_check(Some(vec![1.8]), 6);
}

#[test]
fn single_step_matches_hand_computation() {
    let prior = normal_prior(0.0, 1.0, -10.0, 10.0);
    let (obs, eps) = (0.4, 0.5);
    let cfg = toy_config(eps, 1, 1, 0);
    let (mut accepted, mut rejected) = (0, 0);
    for seed in 0..40u64 {
        let mut rng = seeded(chain_seed(seed, 0), TAG_ABC);
        let cur = prior.sample(&mut rng)[0];
        let cand = prior.sample(&mut rng)[0];
        let u: f64 = rng.random();
        let ratio = distance_weight(&[cand], &[obs], eps).unwrap() / distance_weight(&[cur], &[obs], eps).unwrap();
        let expect = u < ratio;
        match abc_sample(&prior, &Exact, &[obs], &cfg, seed) {
            Ok(post) => {
                assert!(expect, "seed {seed}");
                let step = &post.chains[0].steps[0];
                assert!(step.accepted);
                assert_eq!(step.theta, vec![cand]);
                assert!((step.distance - (cand - obs).abs()).abs() < 1e-15);
                accepted += 1;
            }
            Err(Error::EpsilonTooSmall { min_distance, .. }) => {
                assert!(!expect, "seed {seed}");
                assert!((min_distance - (cur - obs).abs().min((cand - obs).abs())).abs() < 1e-15);
                rejected += 1;
            }
            Err(e) => panic!("{e}"),
        }
    }
    assert!(accepted > 0 && rejected > 0);
}

#[test]
fn chains_are_deterministic_and_in_bounds() {
    let prior = normal_prior(0.5, 0.4, 0.0, 1.0);
    let cfg = toy_config(0.2, 3, 300, 30);
    let a = abc_sample(&prior, &NoisyIdentity { sigma: 0.1 }, &[0.7], &cfg, 42).unwrap();
    let b = abc_sample(&prior, &NoisyIdentity { sigma: 0.1 }, &[0.7], &cfg, 42).unwrap();
    assert_eq!(a, b);
    let c = abc_sample(&prior, &NoisyIdentity { sigma: 0.1 }, &[0.7], &cfg, 43).unwrap();
    assert_ne!(a, c);
    assert!(a.draws().iter().all(|d| (0.0..=1.0).contains(&d[0])));
    assert_eq!(a.len(), 900);
    assert_eq!(a.distances().len(), 900);
    assert!(a.acceptance_rates().iter().all(|r| *r > 0.0 && *r < 1.0));
}

#[test]
fn traces_and_summary_export() {
    let prior = normal_prior(0.5, 0.4, 0.0, 1.0);
    let cfg = toy_config(0.3, 2, 100, 10);
    let post = abc_sample(&prior, &NoisyIdentity { sigma: 0.1 }, &[0.7], &cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    post.write_traces(dir.path()).unwrap();
    let mut rebuilt = Vec::new();
    for k in 0..2 {
        let mut r = csv::Reader::from_path(dir.path().join(format!("chain_{k}.csv"))).unwrap();
        assert_eq!(
            r.headers().unwrap().iter().collect::<Vec<_>>(),
            vec!["step", "x", "distance", "accepted"]
        );
        for (i, rec) in r.records().enumerate() {
            let rec = rec.unwrap();
            if i >= post.burn_in {
                rebuilt.push(vec![rec[1].parse::<f64>().unwrap()]);
            }
        }
    }
    assert_eq!(rebuilt, post.draws());
    let path = dir.path().join("summary.json");
    post.write_summary(&path).unwrap();
    let s: PosteriorSummary = serde_json::from_reader(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(s.draws, 200);
    assert_eq!(s.marginals[0].name, "x");
    let m = &s.marginals[0];
    assert!(m.q05 <= m.q25 && m.q25 <= m.q50 && m.q50 <= m.q75 && m.q75 <= m.q95);
}

#[test]
fn tiny_epsilon_fails_with_minimum_distance() {
    let prior = normal_prior(0.0, 1.0, -5.0, 5.0);
    let cfg = toy_config(1e-6, 2, 10, 50);
    match abc_sample(&prior, &Exact, &[30.0], &cfg, 0) {
        Err(Error::EpsilonTooSmall {
            steps, min_distance, ..
        }) => {
            assert_eq!(steps, 50);
            assert!(min_distance >= 25.0);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn ladder_starts_wide_and_ends_at_epsilon() {
    let cfg = AbcConfig {
        ladder_start: Some(100.0),
        ..toy_config(1.0, 1, 10, 4)
    };
    assert_eq!(cfg.epsilon_at(0), 100.0);
    assert!((cfg.epsilon_at(2) - 10.0).abs() < 1e-12);
    assert_eq!(cfg.epsilon_at(4), 1.0);
    assert_eq!(cfg.epsilon_at(9), 1.0);
    let bad = AbcConfig {
        ladder_start: Some(0.5),
        ..toy_config(1.0, 1, 10, 4)
    };
    assert!(matches!(bad.validate(1), Err(Error::Config(_))));
}

#[test]
fn config_validation_and_output_mismatch() {
    let prior = normal_prior(0.0, 1.0, -5.0, 5.0);
    let cfg = toy_config(1.0, 1, 10, 0);
    assert!(matches!(
        abc_sample(&prior, &Exact, &[1.0, 2.0], &cfg, 0),
        Err(Error::EmulatorTargetMismatch { .. })
    ));
    let bad = AbcConfig {
        proposal_scale: Some(vec![1.0, 1.0]),
        ..cfg.clone()
    };
    assert!(bad.validate(1).is_err());
    assert!(toy_config(0.0, 1, 10, 0).validate(1).is_err());
    assert_eq!(AbcConfig::default().targets.len(), 24);
    assert_eq!(AbcConfig::default().chains * AbcConfig::default().samples, 10_000);
}

#[test]
fn pilot_epsilon_is_a_distance_quantile() {
    let prior = normal_prior(0.0, 1.0, -5.0, 5.0);
    let e50 = pilot_epsilon(&prior, &Exact, &[0.0], DistanceNorm::Mean, 4000, 0.5, 2).unwrap();
    // median of |N(0,1)|
    assert!((e50 - 0.6745).abs() < 0.05, "{e50}");
}

#[test]
fn emulator_surrogate_draws_around_the_mean() {
    use crate::emulator::{fit, FitOptions, ReplicateData};
    let space = line_space(0.0, 10.0);
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
    let reps: Vec<Vec<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, u)| (0..4).map(|r| 2.0 * u[0] + 0.01 * ((i * 4 + r) % 3) as f64).collect())
        .collect();
    let model = fit(&ReplicateData::from_replicates(x, &reps).unwrap(), &FitOptions::default()).unwrap();
    let models = [model];
    let sur = EmulatorSurrogate {
        space: &space,
        emulators: &models,
    };
    assert_eq!(sur.output_len(), 1);
    let mut rng = seeded(0, 1);
    let draws: Vec<f64> = (0..2000).map(|_| sur.sample(&[5.0], &mut rng).unwrap()[0]).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let p = models[0].predict(&[vec![0.5]]).unwrap();
    assert!((mean - p.mean[0]).abs() < 0.01, "{mean} vs {}", p.mean[0]);
    assert!(sur.sample(&[11.0], &mut rng).is_err());
}

fn small_sim() -> SimConfig {
    SimConfig {
        n_agents: 400,
        horizon: 40,
        ..SimConfig::default()
    }
}

fn point_posterior(space: &ParameterSpace, points: &[Vec<f64>]) -> Posterior {
    Posterior {
        names: space.names().map(String::from).collect(),
        burn_in: 0,
        epsilon: 1.0,
        chains: vec![ChainTrace {
            steps: points
                .iter()
                .map(|p| TraceStep {
                    theta: p.clone(),
                    distance: 0.0,
                    accepted: true,
                })
                .collect(),
        }],
    }
}

fn beta_space() -> ParameterSpace {
    ParameterSpace::new(vec![Dimension::new("beta", 0.0, 0.2)]).unwrap()
}

const BASE: crate::simulator::Theta = crate::simulator::Theta {
    beta: 0.05,
    bc_wc: 0.6,
    bc_lf: 0.5,
    tn: 5.0,
};

#[test]
fn predictive_runs_use_the_requested_seeds() {
    let space = beta_space();
    let post = point_posterior(&space, &[vec![0.04], vec![0.05], vec![0.06], vec![0.07]]);
    let cfg = small_sim();
    let pr = posterior_predictive(&post, &space, BASE, 3, &cfg, 500, 9).unwrap();
    assert_eq!(pr.seeds, vec![500, 501, 502]);
    let mut idx = pr.draw_index.clone();
    idx.sort();
    idx.dedup();
    assert_eq!(idx.len(), 3);
    for (i, t) in pr.thetas.iter().enumerate() {
        assert_eq!(t.beta, post.draws()[pr.draw_index[i]][0]);
        assert_eq!(pr.runs[i], crate::simulator::run(*t, pr.seeds[i], &cfg).unwrap());
    }
    assert!(posterior_predictive(&post, &space, BASE, 5, &cfg, 0, 0).is_err());
}

#[test]
fn single_run_bands_collapse() {
    let space = beta_space();
    let post = point_posterior(&space, &[vec![0.05], vec![0.06]]);
    let pr = posterior_predictive(&post, &space, BASE, 1, &small_sim(), 7, 0).unwrap();
    let b = quantile_bands(&pr.runs, Series::NewDiagnoses).unwrap();
    let series = pr.runs[0].series(Series::NewDiagnoses);
    for (t, row) in b.values.iter().enumerate() {
        assert!(row.iter().all(|v| *v == series[t]));
    }
    assert_eq!(b.coverage90(&series), 1.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bands.csv");
    write_bands_csv(&path, &[("new_diagnoses", &b)]).unwrap();
    let mut r = csv::Reader::from_path(&path).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), vec!["variable", "day", "quantile", "value"]);
    assert_eq!(r.records().count(), 40 * 5);
}

#[test]
fn bands_match_sorted_quantiles() {
    let runs: Vec<RunOutput> = (0..5u32)
        .map(|k| RunOutput::from_daily(vec![k, 2 * k], vec![0, 0], vec![1, 1]).unwrap())
        .collect();
    let b = quantile_bands(&runs, Series::NewDiagnoses).unwrap();
    assert_eq!(b.values[0], [0.2, 1.0, 2.0, 3.0, 3.8]);
    assert_eq!(b.values[1], [0.4, 2.0, 4.0, 6.0, 7.6]);
    assert!(quantile_bands(&[], Series::NewDiagnoses).is_err());
}

fn test_expansion(multiplier: f64) -> crate::simulator::Intervention {
    crate::simulator::Intervention {
        start_day: 20,
        wc_multiplier: 1.0,
        lf_multiplier: 1.0,
        test_multiplier: multiplier,
        test_start_day: 20,
    }
}

#[test]
fn null_intervention_gives_identical_arms() {
    let space = beta_space();
    let post = point_posterior(&space, &[vec![0.05], vec![0.08], vec![0.1]]);
    let cf =
        intervention_counterfactual(&post, &space, BASE, 3, &small_sim(), test_expansion(1.0), (25, 39), 100, 0).unwrap();
    assert_eq!(cf.status_quo_runs, cf.intervention_runs);
    assert!(cf.pairs.iter().all(|p| p.status_quo == p.intervention));
    assert_eq!(cf.mean_reduction, 0.0);
    assert_eq!(cf.p_value, 1.0);
}

#[test]
fn zero_transmission_arms_are_flat() {
    let space = beta_space();
    let post = point_posterior(&space, &[vec![0.0], vec![0.0]]);
    let cf =
        intervention_counterfactual(&post, &space, BASE, 2, &small_sim(), test_expansion(5.0), (25, 39), 0, 0).unwrap();
    assert_eq!(cf.mean_reduction, 0.0);
    for r in cf.status_quo_runs.iter().chain(&cf.intervention_runs) {
        assert!(r.active_infections[25..].windows(2).all(|w| w[1] <= w[0]));
    }
    let dir = tempfile::tempdir().unwrap();
    cf.write_csv(&dir.path().join("cf.csv")).unwrap();
}

#[test]
fn counterfactual_window_must_fit() {
    let space = beta_space();
    let post = point_posterior(&space, &[vec![0.05]]);
    let r = intervention_counterfactual(&post, &space, BASE, 1, &small_sim(), test_expansion(5.0), (30, 40), 0, 0);
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn paired_t_test_oracle() {
    let d = [1.0, 2.0, 3.0, 4.0];
    let (t, p) = predictive::paired_t(&d);
    // mean 2.5, sd sqrt(5/3), se sd/2
    let t_oracle = 2.5 / ((5.0f64 / 3.0).sqrt() / 2.0);
    assert!((t.unwrap() - t_oracle).abs() < 1e-12);
    assert!(p > 0.005 && p < 0.02, "{p}");
    assert_eq!(predictive::paired_t(&[0.0, 0.0]), (None, 1.0));
    assert_eq!(predictive::paired_t(&[3.0]), (None, 1.0));
    assert_eq!(predictive::paired_t(&[1.0, 1.0]).1, 0.0);
}
