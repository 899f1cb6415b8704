use nalgebra::{DMatrix, DVector};

use super::{
    check_design, column_mean_squares, kkt_violation, residual_loadings, soft_threshold, support_of, LassoSolution, Link,
    PenalizedFit, PenaltyConfig, SolverOptions,
};
use crate::dictionary::{independent_columns, DEFAULT_COLLINEAR_TOL};
use crate::error::{Error, Result};
use crate::stats::mean;

/// Initial loadings for the linear link:
/// `{E_n[f_j^2 (y - mean(y))^2]}^{1/2}`, floored at `floor * rms(f_j)`.
pub fn initial_loadings_linear(y: &[f64], f: &DMatrix<f64>, floor: f64) -> Vec<f64> {
    let ybar = mean(y);
    let centered: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    residual_loadings(f, &centered, floor, &[])
}

fn objective(resid: &[f64], theta: &DVector<f64>, thresholds: &[f64]) -> f64 {
    let n = resid.len() as f64;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * n);
    loss + theta.iter().zip(thresholds).map(|(t, l)| l * t.abs()).sum::<f64>()
}

/// `E_n[f_j r]` for every column.
fn correlations(data: &[f64], n: usize, p: usize, resid: &[f64]) -> Vec<f64> {
    (0..p)
        .map(|j| {
            let col = &data[j * n..(j + 1) * n];
            col.iter().zip(resid).map(|(a, b)| a * b).sum::<f64>() / n as f64
        })
        .collect()
}

/// Linear-link Lasso by cyclic coordinate descent with active-set sweeps.
///
/// Minimises `E_n[(y - f'theta)^2] / 2 + (lambda / n) sum_j l_j |theta_j|`.
pub fn fit_lasso_linear(
    f: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    loadings: &[f64],
    opts: &SolverOptions,
) -> Result<LassoSolution> {
    lasso_linear_from(f, y, lambda, loadings, opts, None)
}

pub(crate) fn lasso_linear_from(
    f: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    loadings: &[f64],
    opts: &SolverOptions,
    warm: Option<&DVector<f64>>,
) -> Result<LassoSolution> {
    check_design(f, y, loadings)?;
    let (n, p) = f.shape();
    let nf = n as f64;
    let data = f.as_slice();
    let thresholds: Vec<f64> = loadings.iter().map(|l| lambda * l / nf).collect();
    let sq = column_mean_squares(f);
    let mut theta = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
    for j in 0..p {
        if sq[j] == 0.0 {
            theta[j] = 0.0;
        }
    }
    let mut resid: Vec<f64> = (f * &theta).iter().zip(y).map(|(fit, yi)| yi - fit).collect();
    let scale = (y.iter().map(|v| v * v).sum::<f64>() / nf).sqrt().max(1e-300);
    let change_tol = 1e-13 * scale;
    let limit = opts.sweep_limit(p);
    let mut trace = Vec::new();
    if opts.trace {
        trace.push(objective(&resid, &theta, &thresholds));
    }

    let mut sweeps = 0;
    let update = |j: usize, theta: &mut DVector<f64>, resid: &mut [f64]| -> f64 {
        if sq[j] == 0.0 {
            return 0.0;
        }
        let col = &data[j * n..(j + 1) * n];
        let rho = col.iter().zip(resid.iter()).map(|(a, b)| a * b).sum::<f64>() / nf + sq[j] * theta[j];
        let new = soft_threshold(rho, thresholds[j]) / sq[j];
        let delta = new - theta[j];
        if delta != 0.0 {
            for (r, v) in resid.iter_mut().zip(col) {
                *r -= delta * v;
            }
            theta[j] = new;
        }
        delta.abs() * sq[j].sqrt()
    };

    loop {
        // full sweep
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            max_change = max_change.max(update(j, &mut theta, &mut resid));
        }
        sweeps += 1;
        if opts.trace {
            trace.push(objective(&resid, &theta, &thresholds));
        }
        // sweeps restricted to the active set until it settles
        if max_change > change_tol {
            loop {
                let active = support_of(&theta);
                let mut inner: f64 = 0.0;
                for &j in &active {
                    inner = inner.max(update(j, &mut theta, &mut resid));
                }
                sweeps += 1;
                if opts.trace {
                    trace.push(objective(&resid, &theta, &thresholds));
                }
                if inner <= change_tol || sweeps >= limit {
                    break;
                }
            }
        }
        // refresh the residual to shed accumulated rounding before certifying
        resid = (f * &theta).iter().zip(y).map(|(fit, yi)| yi - fit).collect();
        let corr = correlations(data, n, p, &resid);
        let grad: Vec<f64> = corr.iter().map(|c| -c).collect();
        let kkt = kkt_violation(&theta, &grad, &thresholds);
        if kkt <= 0.1 * opts.kkt_tol || (max_change <= change_tol && kkt <= opts.kkt_tol) {
            return Ok(LassoSolution {
                objective: objective(&resid, &theta, &thresholds),
                theta,
                kkt_residual: kkt,
                iterations: sweeps,
                trace,
            });
        }
        if sweeps >= limit {
            return Err(Error::NoConvergence {
                iterations: sweeps,
                kkt_residual: kkt,
            });
        }
    }
}

/// Unpenalized least-squares refit on `support`.
#[derive(Debug, Clone)]
pub struct PostLassoRefit {
    pub theta: DVector<f64>,
    /// Support columns dropped because they were collinear with earlier ones.
    pub dropped: Vec<usize>,
}

/// Least squares on the support columns, zeros elsewhere. Collinear support
/// columns are removed by the greedy pruning rule and reported.
pub fn refit_post_lasso(f: &DMatrix<f64>, y: &[f64], support: &[usize]) -> Result<PostLassoRefit> {
    let (n, p) = f.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("design has {n} rows, response {}", y.len())));
    }
    if let Some(&j) = support.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidInput(format!("support index {j} out of range")));
    }
    let mut theta = DVector::zeros(p);
    if support.is_empty() {
        return Ok(PostLassoRefit { theta, dropped: Vec::new() });
    }
    let sub = f.select_columns(support.iter());
    let keep_local = independent_columns(&sub, DEFAULT_COLLINEAR_TOL);
    let dropped: Vec<usize> = (0..support.len())
        .filter(|k| !keep_local.contains(k))
        .map(|k| support[k])
        .collect();
    if keep_local.is_empty() {
        return Ok(PostLassoRefit { theta, dropped });
    }
    let x = sub.select_columns(keep_local.iter());
    let coef = least_squares(&x, y)?;
    for (k, &local) in keep_local.iter().enumerate() {
        theta[support[local]] = coef[k];
    }
    Ok(PostLassoRefit { theta, dropped })
}

/// Full-column-rank least squares via Householder QR.
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Result<DVector<f64>> {
    let k = x.ncols();
    let yv = DVector::from_column_slice(y);
    if x.nrows() < k {
        return Err(Error::Degenerate("more refit columns than observations".into()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yv;
    let mut coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Degenerate("singular refit design".into()))?;
    // one step of iterative refinement on the normal equations
    let resid = &yv - x * &coef;
    let corr = qr.q().transpose() * &resid;
    if let Some(delta) = r.solve_upper_triangular(&corr) {
        coef += delta;
    }
    Ok(coef)
}

/// Lasso and Post-Lasso with iterated penalty loadings (linear link).
pub fn fit_with_iterated_loadings(f: &DMatrix<f64>, y: &[f64], cfg: &PenaltyConfig) -> Result<PenalizedFit> {
    cfg.validate()?;
    let (n, p) = f.shape();
    let lambda = cfg.lambda(n, p)?;
    let opts = SolverOptions {
        kkt_tol: cfg.kkt_tol,
        ..SolverOptions::default()
    };
    let mut loadings = initial_loadings_linear(y, f, cfg.loading_floor);
    for &j in &cfg.unpenalized {
        loadings[j] = 0.0;
    }
    let mut warm: Option<DVector<f64>> = None;
    let mut lasso_fallback = false;
    let mut k = 0;
    loop {
        k += 1;
        let sol = lasso_linear_from(f, y, lambda, &loadings, &opts, warm.as_ref())?;
        let support = support_of(&sol.theta);
        let refit = refit_post_lasso(f, y, &support)?;
        let done = k >= cfg.max_iter;
        let coef_for_resid = if refit.dropped.is_empty() {
            &refit.theta
        } else {
            lasso_fallback = true;
            &sol.theta
        };
        let mut stop = done;
        if !done {
            let fitted = f * coef_for_resid;
            let resid: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
            let next = residual_loadings(f, &resid, cfg.loading_floor, &cfg.unpenalized);
            let change = next.iter().zip(&loadings).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if change < cfg.loading_stop_tol {
                stop = true;
            } else {
                loadings = next;
            }
        }
        if stop {
            return Ok(PenalizedFit {
                link: Link::Linear,
                theta_lasso: sol.theta.iter().copied().collect(),
                support,
                theta_post: refit.theta.iter().copied().collect(),
                loadings,
                lambda,
                iterations_used: k,
                objective_value: sol.objective,
                kkt_residual: sol.kkt_residual,
                refit_dropped: refit.dropped,
                lasso_residual_loadings: lasso_fallback,
                separation_flag: false,
            });
        }
        warm = Some(sol.theta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n)
            .map(|i| 2.0 * f[(i, 0)] - f[(i, 1)] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        (f, y)
    }

    #[test]
    fn constant_response_gives_floor_loadings() {
        let f = DMatrix::from_fn(4, 2, |i, j| (i + 2 * j) as f64 + 1.0);
        let l = initial_loadings_linear(&[3.0; 4], &f, 1e-6);
        let rms = column_mean_squares(&f);
        for j in 0..2 {
            assert!((l[j] - 1e-6 * rms[j].sqrt()).abs() < 1e-18);
        }
    }

    #[test]
    fn unit_column_loading() {
        let f = DMatrix::from_element(2, 1, 1.0);
        let l = initial_loadings_linear(&[0.0, 2.0], &f, 1e-6);
        assert!((l[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn large_penalty_shrinks_everything() {
        let (f, y) = random_problem(30, 5, 1);
        let corr = correlations(f.as_slice(), 30, 5, &y);
        let maxc = corr.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        let lambda = 30.0 * maxc * 1.01;
        let sol = fit_lasso_linear(&f, &y, lambda, &[1.0; 5], &SolverOptions::default()).unwrap();
        assert!(sol.theta.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn single_column_soft_threshold() {
        // E_n[f^2] = 1
        let f = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let y = [3.0, -1.0, 2.0, 0.5];
        let rho = (3.0 + 1.0 + 2.0 - 0.5) / 4.0;
        let lambda = 2.0; // lambda / n = 0.5
        let sol = fit_lasso_linear(&f, &y, lambda, &[1.0], &SolverOptions::default()).unwrap();
        assert!((sol.theta[0] - (rho - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn sweeps_never_increase_the_objective() {
        let (f, y) = random_problem(40, 12, 7);
        let opts = SolverOptions {
            trace: true,
            ..SolverOptions::default()
        };
        let sol = fit_lasso_linear(&f, &y, 5.0, &[1.0; 12], &opts).unwrap();
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn empty_support_refit_is_zero() {
        let (f, y) = random_problem(10, 3, 2);
        let r = refit_post_lasso(&f, &y, &[]).unwrap();
        assert!(r.theta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn square_design_interpolates() {
        let (f, y) = random_problem(5, 5, 3);
        let r = refit_post_lasso(&f, &y, &[0, 1, 2, 3, 4]).unwrap();
        let fitted = &f * &r.theta;
        for (a, b) in fitted.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_support_column_is_dropped_and_flagged() {
        let (mut f, y) = random_problem(20, 3, 4);
        let c0 = f.column(0).into_owned();
        f.column_mut(2).copy_from(&c0);
        let r = refit_post_lasso(&f, &y, &[0, 1, 2]).unwrap();
        assert_eq!(r.dropped, vec![2]);
        assert_eq!(r.theta[2], 0.0);
    }

    #[test]
    fn single_round_is_one_lasso_and_one_refit() {
        let (f, y) = random_problem(50, 8, 5);
        let cfg = PenaltyConfig {
            max_iter: 1,
            ..PenaltyConfig::default()
        };
        let fit = fit_with_iterated_loadings(&f, &y, &cfg).unwrap();
        assert_eq!(fit.iterations_used, 1);
        let l0 = initial_loadings_linear(&y, &f, cfg.loading_floor);
        assert_eq!(fit.loadings, l0);
        let lambda = cfg.lambda(50, 8).unwrap();
        let direct = fit_lasso_linear(&f, &y, lambda, &l0, &SolverOptions::default()).unwrap();
        for (a, b) in fit.theta_lasso.iter().zip(direct.theta.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
