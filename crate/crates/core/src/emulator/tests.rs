use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg64Mcg;

use super::likelihood::tests::{assert_close, random_instance};
use super::*;

fn params_1d(x: Vec<f64>, a: Vec<u32>, ybar: Vec<f64>, s2: Vec<f64>, l: f64, nu: f64, lambda: f64, mu0: f64) -> ModelParams {
    ModelParams {
        mode: FitMode::Homoskedastic,
        data: ReplicateData::new(x.into_iter().map(|v| vec![v]).collect(), a, ybar, s2).unwrap(),
        center: 0.0,
        scale: 1.0,
        floor: 0.0,
        lengthscales: vec![l],
        nu,
        mu0,
        noise: NoiseField::Constant { lambda },
        degenerate: false,
    }
}

#[test]
fn two_point_closed_form() {
    let (x1, x2, y1, y2) = (0.2, 0.7, 1.3, -0.4);
    let (l, nu, lam, mu0) = (0.4, 1.7, 0.3, 0.25);
    let (a1, a2) = (3u32, 1u32);
    let model = EmulatorModel::from_params(params_1d(
        vec![x1, x2],
        vec![a1, a2],
        vec![y1, y2],
        vec![0.1, 0.0],
        l,
        nu,
        lam,
        mu0,
    ))
    .unwrap();
    // 2x2 system solved by hand
    let k12 = matern52((x1 - x2).abs() / l);
    let c11 = nu + lam / f64::from(a1);
    let c22 = nu + lam / f64::from(a2);
    let c12 = nu * k12;
    let det = c11 * c22 - c12 * c12;
    let inv = [[c22 / det, -c12 / det], [-c12 / det, c11 / det]];
    let r = [y1 - mu0, y2 - mu0];
    for &xs in &[0.0, 0.2, 0.45, 0.9, 1.0] {
        let kv = [nu * matern52((xs - x1).abs() / l), nu * matern52((xs - x2).abs() / l)];
        let w = [
            inv[0][0] * kv[0] + inv[0][1] * kv[1],
            inv[1][0] * kv[0] + inv[1][1] * kv[1],
        ];
        let mean = mu0 + w[0] * r[0] + w[1] * r[1];
        let var = nu - (w[0] * kv[0] + w[1] * kv[1]);
        let p = model.predict(&[vec![xs]]).unwrap();
        assert!((p.mean[0] - mean).abs() < 1e-10, "{} vs {mean}", p.mean[0]);
        assert!((p.var_mean[0] - var).abs() < 1e-10);
        assert!((p.var_noise[0] - lam).abs() < 1e-15);
    }
}

#[test]
fn scalar_loglik_is_a_normal_density() {
    let data = ReplicateData::new(vec![vec![0.3]], vec![1], vec![2.5], vec![0.0]).unwrap();
    let (nu, lam, mu0) = (1.4, 0.6, 1.0);
    let got = replicate_loglik(&data, &[0.5], nu, &[lam], mu0).unwrap();
    let var: f64 = nu + lam;
    let want = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (2.5 - mu0).powi(2) / var;
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn unreplicated_loglik_is_the_standard_gp_density() {
    for seed in 0..10 {
        let inst = random_instance(seed, 15, 15);
        let runs: Vec<Vec<f64>> = inst.ybar.iter().map(|&y| vec![y]).collect();
        let data = ReplicateData::from_replicates(inst.x.clone(), &runs).unwrap();
        let n = data.n();
        let mut cov = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let r = inst.x[i]
                    .iter()
                    .zip(&inst.x[j])
                    .zip(&inst.ls)
                    .map(|((u, v), l)| ((u - v) / l).powi(2))
                    .sum::<f64>()
                    .sqrt();
                cov[(i, j)] = inst.nu * matern52(r) + if i == j { inst.lambda[i] } else { 0.0 };
            }
        }
        let chol = cov.clone().cholesky().unwrap();
        let r = nalgebra::DVector::from_iterator(n, inst.ybar.iter().map(|y| y - 0.5));
        let want = -0.5 * r.dot(&chol.solve(&r))
            - chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
            - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let got = replicate_loglik(&data, &inst.ls, inst.nu, &inst.lambda, 0.5).unwrap();
        assert!(((got - want) / want).abs() < 1e-10);
    }
}

#[test]
fn var_mean_falls_as_replicates_grow() {
    let xs = vec![0.1, 0.4, 0.8];
    let mut prev = f64::INFINITY;
    for a in 1..=6u32 {
        let s2 = if a > 1 { 0.2 } else { 0.0 };
        let model = EmulatorModel::from_params(params_1d(
            xs.clone(),
            vec![2, a, 1],
            vec![0.0, 1.0, 0.5],
            vec![0.3, s2, 0.0],
            0.3,
            1.0,
            0.5,
            0.0,
        ))
        .unwrap();
        let v = model.predict(&[vec![0.45]]).unwrap().var_mean[0];
        assert!(v <= prev + 1e-15);
        prev = v;
    }
}

#[test]
fn interpolation_and_prior_reversion() {
    let model = EmulatorModel::from_params(params_1d(
        vec![0.1, 0.5, 0.9],
        vec![1000, 1000, 1000],
        vec![1.0, -2.0, 0.5],
        vec![1e-8, 1e-8, 1e-8],
        0.01,
        2.0,
        1e-9,
        0.3,
    ))
    .unwrap();
    let p = model.predict(&[vec![0.5], vec![0.3]]).unwrap();
    assert!((p.mean[0] + 2.0).abs() < 1e-6);
    assert!(p.var_mean[0] < 1e-9);
    // 0.3 is 20 lengthscales from every training point
    assert!((p.mean[1] - 0.3).abs() < 1e-6);
    assert!((p.var_mean[1] - 2.0).abs() < 1e-6);
}

#[test]
fn constant_data_gives_a_flagged_constant_model() {
    let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0, 0.5]).collect();
    let data = ReplicateData::new(x, vec![3; 5], vec![4.0; 5], vec![0.0; 5]).unwrap();
    let model = fit(&data, &FitOptions::default()).unwrap();
    assert!(model.is_degenerate());
    let p = model.predict(&[vec![0.3, 0.3], vec![0.9, 0.1]]).unwrap();
    assert!(p.mean.iter().all(|&m| m == 4.0));
    assert!(p.var_noise.iter().all(|&v| v > 0.0 && v <= NOISE_FLOOR));
    assert!(p.var_mean.iter().all(|&v| v == 0.0));
}

#[test]
fn fit_rejects_bad_inputs() {
    let x: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64 / 2.0, 0.5]).collect();
    let few = ReplicateData::new(x.clone(), vec![3; 3], vec![1.0, 2.0, 3.0], vec![0.1; 3]).unwrap();
    assert!(matches!(fit(&few, &FitOptions::default()), Err(Error::InsufficientData(_))));
    let x4: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 / 3.0, 0.5]).collect();
    let singles = ReplicateData::new(x4, vec![1; 4], vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4]).unwrap();
    assert!(matches!(fit(&singles, &FitOptions::default()), Err(Error::InsufficientData(_))));
    let model = EmulatorModel::from_params(params_1d(vec![0.1, 0.5], vec![2, 1], vec![0.0, 1.0], vec![0.1, 0.0], 0.3, 1.0, 0.5, 0.0)).unwrap();
    assert!(matches!(model.predict(&[vec![0.1, 0.2]]), Err(Error::DimensionMismatch { .. })));
}

fn het_problem(seed: u64) -> (ReplicateData, Vec<f64>) {
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let locs = 15;
    let mut x = Vec::new();
    let mut runs = Vec::new();
    for i in 0..locs {
        let u = (i as f64 + 0.5) / locs as f64;
        let t = 5.0 * u;
        let sd = 0.05 + 0.25 * t / 5.0;
        x.push(vec![u]);
        runs.push((0..10).map(|_| t * (2.0 * t).sin() + sd * std.sample(&mut rng)).collect::<Vec<f64>>());
    }
    let test: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
    (ReplicateData::from_replicates(x, &runs).unwrap(), test)
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn recovers_input_dependent_noise() {
    let (data, test) = het_problem(11);
    for mode in [FitMode::Joint, FitMode::Staged] {
        let model = fit(&data, &FitOptions { mode, ..FitOptions::default() }).unwrap();
        let xs: Vec<Vec<f64>> = test.iter().map(|&u| vec![u]).collect();
        let p = model.predict(&xs).unwrap();
        let pred_sd: Vec<f64> = p.var_noise.iter().map(|v| v.sqrt()).collect();
        let true_sd: Vec<f64> = test.iter().map(|u| 0.05 + 0.25 * u).collect();
        let rho = spearman(&pred_sd, &true_sd);
        assert!(rho >= 0.8, "{mode:?}: spearman {rho}");
    }
    let truth = |u: f64| 5.0 * u * (10.0 * u).sin();
    let xs: Vec<Vec<f64>> = test.iter().map(|&u| vec![u]).collect();
    let rmse = |mode| {
        let p = fit(&data, &FitOptions { mode, ..FitOptions::default() }).unwrap().predict(&xs).unwrap();
        (p.mean.iter().zip(&test).map(|(m, &u)| (m - truth(u)).powi(2)).sum::<f64>() / test.len() as f64).sqrt()
    };
    let (het, homo) = (rmse(FitMode::Joint), rmse(FitMode::Homoskedastic));
    assert!(het < 2.0 * homo, "rmse {het} vs homoskedastic {homo}");
}

#[test]
fn replicated_location_noise_is_close_to_truth() {
    let mut rng = Pcg64Mcg::seed_from_u64(5);
    let std = Normal::new(0.0, 1.0).unwrap();
    let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
    let runs: Vec<Vec<f64>> = x
        .iter()
        .map(|p| (0..50).map(|_| 3.0 * p[0] + std.sample(&mut rng)).collect())
        .collect();
    let data = ReplicateData::from_replicates(x, &runs).unwrap();
    for mode in [FitMode::Joint, FitMode::Staged, FitMode::Homoskedastic] {
        let model = fit(&data, &FitOptions { mode, ..FitOptions::default() }).unwrap();
        for l in model.design_noise() {
            assert!((0.5..=2.0).contains(&l), "{mode:?}: lambda {l}");
        }
    }
}

#[test]
fn archive_roundtrip_is_bit_exact() {
    let (data, test) = het_problem(3);
    let model = fit(&data, &FitOptions::default()).unwrap();
    let xs: Vec<Vec<f64>> = test.iter().map(|&u| vec![u]).collect();
    let before = model.predict(&xs).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = EmulatorModel::load(&path).unwrap();
    let after = loaded.predict(&xs).unwrap();
    for i in 0..xs.len() {
        assert_eq!(before.mean[i].to_bits(), after.mean[i].to_bits());
        assert_eq!(before.var_mean[i].to_bits(), after.var_mean[i].to_bits());
        assert_eq!(before.var_noise[i].to_bits(), after.var_noise[i].to_bits());
    }
    assert_eq!(model.to_json().unwrap(), loaded.to_json().unwrap());
    let bad = model.to_json().unwrap().replace("histmatch-emulator", "other");
    assert!(matches!(EmulatorModel::from_json(&bad), Err(Error::Archive(_))));
}

#[test]
fn fit_is_deterministic() {
    let (data, _) = het_problem(8);
    let a = fit(&data, &FitOptions::default()).unwrap().to_json().unwrap();
    let b = fit(&data, &FitOptions::default()).unwrap().to_json().unwrap();
    assert_eq!(a, b);
}

fn standardized_problem(seed: u64) -> (Vec<Vec<f64>>, Vec<u32>, Vec<f64>, Vec<f64>) {
    let inst = random_instance(seed, 10, 40);
    (inst.x, inst.a, inst.ybar, inst.s2)
}

#[test]
fn objective_gradients_match_finite_differences() {
    for seed in 300..306 {
        let (x, a, ybar, s2) = standardized_problem(seed);
        let st = Standardized {
            x: &x,
            a: &a,
            ybar: &ybar,
            s2: &s2,
            floor: NOISE_FLOOR,
        };
        let d = x[0].len();
        let n = x.len();
        let mut rng = Pcg64Mcg::seed_from_u64(seed);
        let unif = rand_distr::Uniform::new(-1.0, 1.0).unwrap();
        let joint_u: Vec<f64> = (0..2 * d + 2 + n).map(|_| unif.sample(&mut rng)).collect();
        let homo_u: Vec<f64> = (0..d + 2).map(|_| unif.sample(&mut rng)).collect();
        let checks: [(&dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)>, &Vec<f64>); 2] = [
            (&|u: &[f64]| st.joint_objective(0.4, u), &joint_u),
            (&|u: &[f64]| st.homoskedastic_objective(u), &homo_u),
        ];
        for (f, u0) in checks {
            let (_, grad) = f(u0).unwrap();
            let h = 1e-5;
            for i in 0..u0.len() {
                let mut up = u0.clone();
                let mut dn = u0.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (f(&up).unwrap().0 - f(&dn).unwrap().0) / (2.0 * h);
                assert_close(fd, grad[i]);
            }
        }
    }
}

#[test]
fn models_are_shareable_across_threads() {
    fn check<T: Send + Sync>() {}
    check::<EmulatorModel>();
}
