//! Monte Carlo size study of ATE tests after model selection.
//!
//! Data follow `d = 1{Lambda(x'(c_d theta0)) > v}`, `y = d x'(c_y theta0) + zeta`
//! with `x ~ N(0, Sigma)`, `Sigma_kj = 0.5^{|j-k|}` and `theta0_j = 1/j^2`.
//! Since `E[x] = 0` the average treatment effect is zero in every cell.
//! Both estimators share the same arm-specific Post-Lasso fits of
//! `E[Y | D = d, X]`; only the orthogonal one adds the inverse-propensity
//! correction.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{draw_seed, se_analytic};
use crate::data::RawData;
use crate::error::{Error, Result};
use crate::lasso::{fit_with_iterated_loadings, PenaltyConfig};
use crate::pipeline::fit_nuisance;
use crate::reduced_form::{estimate_alpha, Propensity, DEFAULT_TRIM_EPS};
use crate::stats::{logistic, normal_quantile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub r2_d: Vec<f64>,
    pub r2_y: Vec<f64>,
    pub replications: usize,
    /// Nominal size of the two-sided t-test.
    pub level: f64,
    pub seed: u64,
    pub toeplitz_base: f64,
    /// Prepend a constant column to the controls (arm intercepts).
    pub intercept: bool,
    pub naive_variance: NaiveVariance,
    pub penalty: PenaltyConfig,
    pub trim_eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let grid: Vec<f64> = (0..10).map(|k| k as f64 / 10.0).collect();
        Self {
            n: 200,
            p: 250,
            r2_d: grid.clone(),
            r2_y: grid,
            replications: 100,
            level: 0.05,
            seed: 42,
            toeplitz_base: 0.5,
            intercept: true,
            naive_variance: NaiveVariance::FixedDesign,
            penalty: PenaltyConfig::default(),
            trim_eps: DEFAULT_TRIM_EPS,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("size experiment needs at least one replication".into()));
        }
        if self.n < 4 || self.p == 0 {
            return Err(Error::Config("simulation needs n >= 4 and p >= 1".into()));
        }
        if self.r2_d.is_empty() || self.r2_y.is_empty() {
            return Err(Error::Config("empty R^2 grid".into()));
        }
        if self.r2_d.iter().chain(&self.r2_y).any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::Config("R^2 values must lie in [0, 1)".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("test level must lie in (0, 1)".into()));
        }
        if !(self.toeplitz_base.abs() < 1.0) {
            return Err(Error::Config("Toeplitz base must lie in (-1, 1)".into()));
        }
        self.penalty.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// `theta0_j = 1 / j^2`.
pub fn theta0(p: usize) -> Vec<f64> {
    (1..=p).map(|j| 1.0 / (j as f64 * j as f64)).collect()
}

/// `Sigma_kj = base^{|j-k|}`.
pub fn toeplitz(p: usize, base: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| base.powi((i as i32 - j as i32).abs()))
}

/// `theta' Sigma theta`.
pub fn quadratic_form(theta: &[f64], sigma: &DMatrix<f64>) -> f64 {
    let t = DVector::from_column_slice(theta);
    (t.transpose() * sigma * &t)[(0, 0)]
}

/// Scale factors `(c_d, c_y)` for the requested population R^2 values.
pub fn coef_scales(r2_d: f64, r2_y: f64, theta: &[f64], sigma: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&r2_d) || !(0.0..1.0).contains(&r2_y) {
        return Err(Error::InvalidInput(format!("R^2 must lie in [0, 1), got ({r2_d}, {r2_y})")));
    }
    let q = quadratic_form(theta, sigma);
    let pi2_3 = std::f64::consts::PI.powi(2) / 3.0;
    Ok((
        (pi2_3 * r2_d / ((1.0 - r2_d) * q)).sqrt(),
        (r2_y / ((1.0 - r2_y) * q)).sqrt(),
    ))
}

/// Lower Cholesky factor `L` of a covariance matrix (`Sigma = L L'`).
pub fn covariance_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(sigma.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Degenerate("covariance matrix is not positive definite".into()))
}

/// `n` rows of `N(0, L L')`.
pub fn draw_covariates<R: Rng>(n: usize, factor: &DMatrix<f64>, rng: &mut R) -> DMatrix<f64> {
    let p = factor.nrows();
    let e = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    e * factor.transpose()
}

/// One simulated dataset.
#[derive(Debug, Clone)]
pub struct SimData {
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub x: DMatrix<f64>,
}

impl SimData {
    pub fn into_raw(self) -> Result<RawData> {
        let names = (1..=self.x.ncols()).map(|j| format!("x{j}")).collect();
        RawData::new(self.y, self.d.clone(), self.d, self.x, names)
    }
}

/// Draws one replication of the design with scales `(c_d, c_y)`.
pub fn gen_dgp(n: usize, factor: &DMatrix<f64>, theta: &[f64], c_d: f64, c_y: f64, seed: u64) -> SimData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = draw_covariates(n, factor, &mut rng);
    let idx = &x * DVector::from_column_slice(theta);
    let mut d = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let v: f64 = rng.random();
        let zeta: f64 = rng.sample(StandardNormal);
        let di = if logistic(c_d * idx[i]) > v { 1.0 } else { 0.0 };
        d.push(di);
        y.push(di * c_y * idx[i] + zeta);
    }
    SimData { y, d, x }
}

/// Monte Carlo approximation of `E[x'(c_y theta0)]`, the cell's average
/// treatment effect (zero by symmetry; this checks the generator).
pub fn true_ate_mc(factor: &DMatrix<f64>, theta: &[f64], c_y: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chunk = 10_000;
    let t = DVector::from_column_slice(theta);
    let mut total = 0.0;
    let mut left = draws;
    while left > 0 {
        let m = left.min(chunk);
        let x = draw_covariates(m, factor, &mut rng);
        total += (x * &t).sum() * c_y;
        left -= m;
    }
    total / draws as f64
}

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
    /// Set when the estimate is degenerate (for example both arm fits empty).
    pub flagged: bool,
}

/// Arm-specific Post-Lasso fits of `E[Y | D = d, X]` on the design `f`.
#[derive(Debug, Clone)]
pub struct ArmFits {
    /// `g[d][i]`: fitted value for arm `d` at row `i`.
    pub g: [Vec<f64>; 2],
    pub support: [Vec<usize>; 2],
    pub theta: [Vec<f64>; 2],
}

/// Fits `y` on `f` separately within each treatment arm, with the penalty
/// sized for the `2p`-column arm-interacted design.
pub fn fit_arms(f: &DMatrix<f64>, y: &[f64], d: &[f64], penalty: &PenaltyConfig) -> Result<ArmFits> {
    let n = f.nrows();
    let mut cfg = penalty.clone();
    cfg.penalty_dim = Some(2 * f.ncols());
    cfg.reference_n = Some(n);
    let mut g: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut support: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut theta: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for arm in 0..2 {
        let mask: Vec<bool> = d.iter().map(|&v| v == arm as f64).collect();
        if mask.iter().filter(|m| **m).count() < 2 {
            return Err(Error::Degenerate(format!("treatment arm {arm} has fewer than two rows")));
        }
        let rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        let ys: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let fit = fit_with_iterated_loadings(&f.select_rows(rows.iter()), &ys, &cfg)?;
        g[arm] = fit.predict(f).iter().copied().collect();
        support[arm] = fit.support.clone();
        theta[arm] = fit.theta_post.clone();
    }
    Ok(ArmFits { g, support, theta })
}

/// Variance formula of the naive estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveVariance {
    /// OLS variance of the averaged post-selection fit with the design held
    /// fixed: `sum_d a_d' sigma_d^2 (F_d'F_d)^{-1} a_d`.
    FixedDesign,
    /// `FixedDesign` plus the sampling variance of the averaged contrast
    /// over the covariate distribution.
    WithCovariateSampling,
}

/// `E_n[g(1, x) - g(0, x)]` with a plug-in variance that treats the selected
/// regressors as the true model, ignoring selection.
pub fn naive_ate(f: &DMatrix<f64>, y: &[f64], d: &[f64], arms: &ArmFits, variance: NaiveVariance) -> Result<Estimate> {
    let n = f.nrows();
    if arms.support[0].is_empty() && arms.support[1].is_empty() {
        return Ok(Estimate {
            estimate: 0.0,
            se: 0.0,
            flagged: true,
        });
    }
    let contrast: Vec<f64> = (0..n).map(|i| arms.g[1][i] - arms.g[0][i]).collect();
    let est = contrast.iter().sum::<f64>() / n as f64;
    let mut var = match variance {
        NaiveVariance::FixedDesign => 0.0,
        NaiveVariance::WithCovariateSampling => crate::stats::sample_variance(&contrast) / n as f64,
    };
    for arm in 0..2 {
        let s = &arms.support[arm];
        if s.is_empty() {
            continue;
        }
        let rows: Vec<usize> = (0..n).filter(|&i| d[i] == arm as f64).collect();
        let fs = f.select_rows(rows.iter()).select_columns(s.iter());
        let resid: Vec<f64> = rows.iter().map(|&i| y[i] - arms.g[arm][i]).collect();
        let dof = rows.len().saturating_sub(s.len()).max(1);
        let sigma2 = resid.iter().map(|r| r * r).sum::<f64>() / dof as f64;
        let gram = fs.transpose() * &fs;
        let inv = match gram.clone().cholesky() {
            Some(c) => c.inverse(),
            None => gram
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Degenerate(format!("refit Gram matrix: {e}")))?,
        };
        let a = DVector::from_iterator(s.len(), s.iter().map(|&j| f.column(j).sum() / n as f64));
        var += sigma2 * (a.transpose() * inv * &a)[(0, 0)];
    }
    Ok(Estimate {
        estimate: est,
        se: var.sqrt(),
        flagged: false,
    })
}

/// `alpha_Y(1) - alpha_Y(0)` from the orthogonal moment with an l1-logistic
/// propensity, and the analytic standard error.
pub fn orthogonal_ate(f: &DMatrix<f64>, y: &[f64], d: &[f64], arms: &ArmFits, penalty: &PenaltyConfig, trim_eps: f64) -> Result<Estimate> {
    let (mhat, _) = fit_nuisance(f, d, None, penalty)?;
    let prop = Propensity::new(&mhat, trim_eps)?;
    let (a1, c1) = estimate_alpha(y, d, 1, &arms.g[1], &prop);
    let (a0, c0) = estimate_alpha(y, d, 0, &arms.g[0], &prop);
    let contrast: Vec<f64> = c1.iter().zip(&c0).map(|(u, v)| u + a1 - v - a0).collect();
    Ok(Estimate {
        estimate: a1 - a0,
        se: se_analytic(&contrast, 1.0)?,
        flagged: false,
    })
}

/// Controls handed to the learners: `x`, optionally after a constant column.
pub fn controls(x: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if !intercept {
        return x.clone();
    }
    x.clone().insert_column(0, 1.0)
}

/// Rejection frequencies for one `(R^2_d, R^2_y)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeCell {
    pub r2_d: f64,
    pub r2_y: f64,
    pub c_d: f64,
    pub c_y: f64,
    pub true_ate: f64,
    /// Replications where both estimators were computed.
    pub completed: usize,
    pub failed: usize,
    pub reject_orthogonal: f64,
    pub reject_naive: f64,
    pub mc_se_orthogonal: f64,
    pub mc_se_naive: f64,
    pub mean_orthogonal: f64,
    pub mean_naive: f64,
    pub sd_orthogonal: f64,
    pub sd_naive: f64,
    /// Naive estimates flagged as degenerate (counted as non-rejections).
    pub naive_flagged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SizeTable {
    pub config: SimConfig,
    pub critical_value: f64,
    pub cells: Vec<SizeCell>,
}

impl SizeTable {
    pub fn cell(&self, r2_d: f64, r2_y: f64) -> Option<&SizeCell> {
        self.cells.iter().find(|c| c.r2_d == r2_d && c.r2_y == r2_y)
    }
}

/// Both estimates for one replication.
pub fn run_replication(cfg: &SimConfig, factor: &DMatrix<f64>, theta: &[f64], c_d: f64, c_y: f64, seed: u64) -> Result<(Estimate, Estimate)> {
    let sim = gen_dgp(cfg.n, factor, theta, c_d, c_y, seed);
    let f = controls(&sim.x, cfg.intercept);
    let arms = fit_arms(&f, &sim.y, &sim.d, &cfg.penalty)?;
    let naive = naive_ate(&f, &sim.y, &sim.d, &arms, cfg.naive_variance)?;
    let orth = orthogonal_ate(&f, &sim.y, &sim.d, &arms, &cfg.penalty, cfg.trim_eps)?;
    Ok((orth, naive))
}

fn summarize(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let sd = if values.len() > 1 {
        crate::stats::sample_variance(values).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Runs every cell of the grid; replication `r` of cell `k` uses the seed
/// `draw_seed(seed, k * replications + r)`.
pub fn run_size_experiment(cfg: &SimConfig) -> Result<SizeTable> {
    cfg.validate()?;
    let theta = theta0(cfg.p);
    let sigma = toeplitz(cfg.p, cfg.toeplitz_base);
    let factor = covariance_factor(&sigma)?;
    let cv = normal_quantile(1.0 - cfg.level / 2.0);
    let mut cells = Vec::new();
    let grid: Vec<(f64, f64)> = cfg
        .r2_d
        .iter()
        .flat_map(|&a| cfg.r2_y.iter().map(move |&b| (a, b)))
        .collect();
    for (k, &(r2_d, r2_y)) in grid.iter().enumerate() {
        let (c_d, c_y) = coef_scales(r2_d, r2_y, &theta, &sigma)?;
        let true_ate = 0.0;
        let reps: Vec<Result<(Estimate, Estimate)>> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let seed = draw_seed(cfg.seed, (k * cfg.replications + r) as u64);
                run_replication(cfg, &factor, &theta, c_d, c_y, seed)
            })
            .collect();
        let ok: Vec<(Estimate, Estimate)> = reps.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let m = ok.len();
        let rejects = |pick: fn(&(Estimate, Estimate)) -> Estimate| {
            ok.iter()
                .filter(|e| {
                    let est = pick(e);
                    !est.flagged && est.se > 0.0 && ((est.estimate - true_ate) / est.se).abs() > cv
                })
                .count() as f64
                / m.max(1) as f64
        };
        let ro = rejects(|e| e.0);
        let rn = rejects(|e| e.1);
        let binom = |f: f64| (f * (1.0 - f) / m.max(1) as f64).sqrt();
        let (mo, so) = summarize(&ok.iter().map(|e| e.0.estimate).collect::<Vec<_>>());
        let (mn, sn) = summarize(&ok.iter().map(|e| e.1.estimate).collect::<Vec<_>>());
        cells.push(SizeCell {
            r2_d,
            r2_y,
            c_d,
            c_y,
            true_ate,
            completed: m,
            failed: cfg.replications - m,
            reject_orthogonal: ro,
            reject_naive: rn,
            mc_se_orthogonal: binom(ro),
            mc_se_naive: binom(rn),
            mean_orthogonal: mo,
            mean_naive: mn,
            sd_orthogonal: so,
            sd_naive: sn,
            naive_flagged: ok.iter().filter(|e| e.1.flagged).count(),
        });
    }
    Ok(SizeTable {
        config: cfg.clone(),
        critical_value: cv,
        cells,
    })
}

/// Instrumental-variable design with one-sided compliance and a constant
/// effect `effect` for every unit: `Z ~ Bernoulli(Lambda(x'a))`, compliers
/// drawn with probability `Lambda(0.5 + x'b)`, `D = Z * complier`, and
/// `Y = x'beta + effect * D + eps`. Every quantile treatment effect for
/// compliers equals `effect`.
pub fn gen_one_sided_iv(n: usize, p: usize, effect: f64, seed: u64) -> Result<RawData> {
    let sigma = toeplitz(p, 0.5);
    let factor = covariance_factor(&sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = draw_covariates(n, &factor, &mut rng);
    let coef = |scale: f64| -> Vec<f64> { (1..=p).map(|j| scale / (j as f64 * j as f64)).collect() };
    let (a, b, beta) = (coef(0.5), coef(0.8), coef(1.0));
    let lin = |c: &[f64], i: usize| (0..p).map(|j| x[(i, j)] * c[j]).sum::<f64>();
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let zi = if rng.random::<f64>() < logistic(lin(&a, i)) { 1.0 } else { 0.0 };
        let complier = rng.random::<f64>() < logistic(0.5 + lin(&b, i));
        let di = if zi == 1.0 && complier { 1.0 } else { 0.0 };
        let eps: f64 = rng.sample(StandardNormal);
        y.push(lin(&beta, i) + effect * di + eps);
        d.push(di);
        z.push(zi);
    }
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    RawData::new(y, d, z, x, names)
}
