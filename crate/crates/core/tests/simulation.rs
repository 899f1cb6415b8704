mod common;

use common::*;
use hdte::reduced_form::{estimate_alpha, Propensity};
use hdte::simulation::{
    coef_scales, covariance_factor, draw_covariates, gen_dgp, naive_ate, run_size_experiment, theta0, toeplitz,
    true_ate_mc, ArmFits, NaiveVariance, SimConfig,
};
use rand::Rng;

#[test]
fn scales_match_double_sum_oracle() {
    let p = 250;
    let theta: Vec<f64> = (1..=p).map(|j| 1.0 / (j * j) as f64).collect();
    assert_eq!(theta0(p), theta);
    let mut q = 0.0;
    for j in 0..p {
        for k in 0..p {
            q += theta[j] * theta[k] * 0.5f64.powi((j as i32 - k as i32).abs());
        }
    }
    let sigma = toeplitz(p, 0.5);
    let (c_d, c_y) = coef_scales(0.5, 0.5, &theta, &sigma).unwrap();
    let want = (std::f64::consts::PI.powi(2) / 3.0).sqrt() / q.sqrt();
    assert!((c_d - want).abs() < 1e-12);
    assert!((c_y - 1.0 / q.sqrt()).abs() < 1e-12);
    let (_, c_y9) = coef_scales(0.0, 0.9, &theta, &sigma).unwrap();
    assert!((c_y9 - (9.0 / q).sqrt()).abs() < 1e-12);
    assert!(coef_scales(1.0, 0.0, &theta, &sigma).is_err());
}

#[test]
fn covariates_have_toeplitz_correlation() {
    let sigma = toeplitz(5, 0.5);
    let factor = covariance_factor(&sigma).unwrap();
    let mut r = rng(40);
    let x = draw_covariates(100_000, &factor, &mut r);
    let a: Vec<f64> = x.column(0).iter().copied().collect();
    let b: Vec<f64> = x.column(1).iter().copied().collect();
    let c: Vec<f64> = x.column(2).iter().copied().collect();
    let corr = |u: &[f64], v: &[f64]| {
        let (mu, mv) = (kahan_mean(u), kahan_mean(v));
        let cov = kahan_mean(&u.iter().zip(v).map(|(p, q)| (p - mu) * (q - mv)).collect::<Vec<_>>());
        cov / (two_pass_variance(u) * two_pass_variance(v)).sqrt()
    };
    // sd of a sample correlation near 0.5 at n = 1e5 is about 0.0024
    assert!((corr(&a, &b) - 0.5).abs() < 0.012);
    assert!((corr(&a, &c) - 0.25).abs() < 0.012);
}

#[test]
fn null_design_has_fair_coin_treatment_and_pure_noise_outcome() {
    let p = 10;
    let factor = covariance_factor(&toeplitz(p, 0.5)).unwrap();
    let data = gen_dgp(20_000, &factor, &theta0(p), 0.0, 0.0, 3);
    let share = kahan_mean(&data.d);
    assert!((share - 0.5).abs() < 4.0 * (0.25f64 / 20_000.0).sqrt());
    let treated: Vec<f64> = (0..20_000).filter(|&i| data.d[i] == 1.0).map(|i| data.y[i]).collect();
    let control: Vec<f64> = (0..20_000).filter(|&i| data.d[i] == 0.0).map(|i| data.y[i]).collect();
    let diff = kahan_mean(&treated) - kahan_mean(&control);
    assert!(diff.abs() < 4.0 * (2.0f64 / 10_000.0).sqrt());
}

#[test]
fn true_effect_is_zero_for_every_scale() {
    let p = 30;
    let theta = theta0(p);
    let sigma = toeplitz(p, 0.5);
    let factor = covariance_factor(&sigma).unwrap();
    let (_, c_y) = coef_scales(0.0, 0.9, &theta, &sigma).unwrap();
    // E[x' c theta] = 0 as x is centred; the oracle is MC with sd c_y sqrt(q) / sqrt(draws)
    let mc = true_ate_mc(&factor, &theta, c_y, 200_000, 1);
    assert!(mc.abs() < 4.0 * 3.0 / (200_000f64).sqrt(), "{mc}");
}

#[test]
fn naive_estimate_is_the_averaged_fit_contrast() {
    let mut r = rng(41);
    let (n, p) = (10, 3);
    let f = normal_matrix(&mut r, n, p);
    let d: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let y: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let b1 = vec![0.5, 0.0, -1.0];
    let b0 = vec![0.2, 0.3, 0.0];
    let pred = |b: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..p).map(|j| f[(i, j)] * b[j]).sum()).collect() };
    let arms = ArmFits {
        g: [pred(&b0), pred(&b1)],
        support: [vec![0, 1], vec![0, 2]],
        theta: [b0.clone(), b1.clone()],
    };
    let est = naive_ate(&f, &y, &d, &arms, NaiveVariance::FixedDesign).unwrap();
    let mut brute = 0.0;
    for i in 0..n {
        for j in 0..p {
            brute += f[(i, j)] * (b1[j] - b0[j]);
        }
    }
    assert!((est.estimate - brute / n as f64).abs() < 1e-14);
    assert!(est.se > 0.0 && !est.flagged);

    let same = ArmFits {
        g: [pred(&b1), pred(&b1)],
        support: [vec![0, 2], vec![0, 2]],
        theta: [b1.clone(), b1.clone()],
    };
    assert_eq!(naive_ate(&f, &y, &d, &same, NaiveVariance::FixedDesign).unwrap().estimate, 0.0);
    let empty = ArmFits {
        g: [vec![0.0; n], vec![0.0; n]],
        support: [vec![], vec![]],
        theta: [vec![0.0; p], vec![0.0; p]],
    };
    let e = naive_ate(&f, &y, &d, &empty, NaiveVariance::FixedDesign).unwrap();
    assert!(e.flagged && e.estimate == 0.0);
}

#[test]
fn randomized_treatment_collapses_to_inverse_probability_weighting() {
    let mut r = rng(42);
    let n = 50;
    let d: Vec<f64> = (0..n).map(|_| f64::from(r.random_bool(0.5))).collect();
    let y: Vec<f64> = (0..n).map(|_| r.random_range(0.0..4.0)).collect();
    let prop = Propensity::new(&vec![0.5; n], 1e-12).unwrap();
    let zero = vec![0.0; n];
    let (a1, _) = estimate_alpha(&y, &d, 1, &zero, &prop);
    let (a0, _) = estimate_alpha(&y, &d, 0, &zero, &prop);
    let dy: Vec<f64> = (0..n).map(|i| d[i] * y[i]).collect();
    let cy: Vec<f64> = (0..n).map(|i| (1.0 - d[i]) * y[i]).collect();
    let want = 2.0 * (kahan_mean(&dy) - kahan_mean(&cy));
    assert!(((a1 - a0) - want).abs() < 1e-12);
}

#[test]
fn orthogonal_estimator_is_centred_under_the_null() {
    let cfg = SimConfig {
        n: 200,
        p: 50,
        r2_d: vec![0.0],
        r2_y: vec![0.0],
        replications: 100,
        seed: 8,
        ..SimConfig::default()
    };
    let table = run_size_experiment(&cfg).unwrap();
    let c = &table.cells[0];
    assert_eq!(c.completed, 100);
    let mc_se = c.sd_orthogonal / (c.completed as f64).sqrt();
    assert!(c.mean_orthogonal.abs() < 3.0 * mc_se, "{} vs {}", c.mean_orthogonal, mc_se);
    assert!((0.0..=1.0).contains(&c.reject_orthogonal));
    let f = c.reject_orthogonal;
    assert!((c.mc_se_orthogonal - (f * (1.0 - f) / 100.0).sqrt()).abs() < 1e-15);
}

#[test]
fn experiment_is_reproducible() {
    let cfg = SimConfig {
        n: 100,
        p: 20,
        r2_d: vec![0.5],
        r2_y: vec![0.5],
        replications: 5,
        ..SimConfig::default()
    };
    let a = run_size_experiment(&cfg).unwrap();
    let b = run_size_experiment(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a.cells).unwrap(), serde_json::to_string(&b.cells).unwrap());
}
