use nalgebra::{DMatrix, DVector};

use super::{
    check_design, column_mean_squares, kkt_violation, residual_loadings, soft_threshold, support_of, LassoSolution, Link,
    PenalizedFit, PenaltyConfig, SolverOptions,
};
use crate::dictionary::{independent_columns, DEFAULT_COLLINEAR_TOL};
use crate::error::{Error, Result};
use crate::stats::{log1p_exp, logistic};

/// Coefficient cap applied by [`refit_logistic`] under quasi-separation.
pub const SEPARATION_CAP: f64 = 30.0;

const MAX_NEWTON: usize = 200;
const REFIT_MAX_STEPS: usize = 100;
const REFIT_REL_TOL: f64 = 1e-10;

/// `l_j = 0.5 * {E_n[f_j^2]}^{1/2}`, floored at `floor * rms(f_j)`.
pub fn initial_loadings_logistic(f: &DMatrix<f64>, floor: f64) -> Vec<f64> {
    column_mean_squares(f)
        .into_iter()
        .map(|ms| (0.5 * ms.sqrt()).max(floor * ms.sqrt()))
        .collect()
}

/// Mean negative log-likelihood `E_n[log(1 + e^t) - y t]` at index `eta`.
pub fn logistic_loss(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(&t, &yi)| log1p_exp(t) - yi * t).sum::<f64>() / eta.len() as f64
}

fn check_binary(y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("logistic response must be 0/1".into()));
    }
    Ok(())
}

fn penalty(theta: &DVector<f64>, thresholds: &[f64]) -> f64 {
    theta.iter().zip(thresholds).map(|(t, l)| l * t.abs()).sum()
}

/// l1-penalized logistic regression by proximal Newton: each outer step
/// minimises the penalized quadratic model with weighted coordinate descent,
/// followed by a backtracking line search on the penalized objective.
pub fn fit_l1_logistic(
    f: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    loadings: &[f64],
    opts: &SolverOptions,
) -> Result<LassoSolution> {
    logistic_from(f, y, lambda, loadings, opts, None)
}

pub(crate) fn logistic_from(
    f: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    loadings: &[f64],
    opts: &SolverOptions,
    warm: Option<&DVector<f64>>,
) -> Result<LassoSolution> {
    check_design(f, y, loadings)?;
    check_binary(y)?;
    let (n, p) = f.shape();
    let nf = n as f64;
    let all_same = y.iter().all(|&v| v == y[0]);
    if all_same {
        for (j, col) in f.column_iter().enumerate() {
            let pos = col.iter().any(|&v| v > 0.0);
            let neg = col.iter().any(|&v| v < 0.0);
            if loadings[j] == 0.0 && pos != neg {
                return Err(Error::Unbounded(format!(
                    "constant response with unpenalized single-signed column {j}"
                )));
            }
        }
    }
    let data = f.as_slice();
    let thresholds: Vec<f64> = loadings.iter().map(|l| lambda * l / nf).collect();
    let mut theta = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
    let mut eta: Vec<f64> = (f * &theta).iter().copied().collect();
    let objective = |eta: &[f64], theta: &DVector<f64>| logistic_loss(eta, y) + penalty(theta, &thresholds);
    let mut obj = objective(&eta, &theta);
    let mut trace = if opts.trace { vec![obj] } else { Vec::new() };
    let sweep_limit = opts.sweep_limit(p);
    let mut kkt = f64::INFINITY;

    for outer in 0..MAX_NEWTON {
        let prob: Vec<f64> = eta.iter().map(|&t| logistic(t)).collect();
        let w: Vec<f64> = prob.iter().map(|q| (q * (1.0 - q)).max(1e-12)).collect();
        let grad: Vec<f64> = (0..p)
            .map(|j| {
                let col = &data[j * n..(j + 1) * n];
                col.iter().zip(prob.iter().zip(y)).map(|(v, (q, yi))| v * (q - yi)).sum::<f64>() / nf
            })
            .collect();
        kkt = kkt_violation(&theta, &grad, &thresholds);
        if kkt <= 0.1 * opts.kkt_tol {
            return Ok(LassoSolution {
                theta,
                objective: obj,
                kkt_residual: kkt,
                iterations: outer,
                trace,
            });
        }

        // weighted coordinate descent on the quadratic model
        let s: Vec<f64> = (0..p)
            .map(|j| {
                let col = &data[j * n..(j + 1) * n];
                col.iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>() / nf
            })
            .collect();
        let mut q: Vec<f64> = prob.iter().zip(y).map(|(pi, yi)| yi - pi).collect();
        let mut cand = theta.clone();
        let scale = s.iter().fold(0.0f64, |a, b| a.max(*b)).sqrt().max(1e-300);
        let update = |j: usize, cand: &mut DVector<f64>, q: &mut [f64]| -> f64 {
            if s[j] <= 0.0 {
                return 0.0;
            }
            let col = &data[j * n..(j + 1) * n];
            let rho = col.iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>() / nf + s[j] * cand[j];
            let new = soft_threshold(rho, thresholds[j]) / s[j];
            let d = new - cand[j];
            if d != 0.0 {
                for ((qi, v), wi) in q.iter_mut().zip(col).zip(&w) {
                    *qi -= d * wi * v;
                }
                cand[j] = new;
            }
            d.abs() * s[j].sqrt()
        };
        let inner_tol = 1e-14 * scale.max(1.0);
        let mut sweeps = 0;
        loop {
            let mut full: f64 = 0.0;
            for j in 0..p {
                full = full.max(update(j, &mut cand, &mut q));
            }
            sweeps += 1;
            if full <= inner_tol || sweeps >= sweep_limit {
                break;
            }
            loop {
                let active = support_of(&cand);
                let mut inner: f64 = 0.0;
                for &j in &active {
                    inner = inner.max(update(j, &mut cand, &mut q));
                }
                sweeps += 1;
                if inner <= inner_tol || sweeps >= sweep_limit {
                    break;
                }
            }
        }

        let dir = &cand - &theta;
        let descent: f64 = grad.iter().zip(dir.iter()).map(|(g, d)| g * d).sum::<f64>() + penalty(&cand, &thresholds)
            - penalty(&theta, &thresholds);
        let fdir: Vec<f64> = (f * &dir).iter().copied().collect();
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial_theta = &theta + &dir * t;
            let trial_eta: Vec<f64> = eta.iter().zip(&fdir).map(|(e, d)| e + t * d).collect();
            let trial_obj = objective(&trial_eta, &trial_theta);
            if trial_obj <= obj + 1e-4 * t * descent.min(0.0) {
                accepted = trial_obj < obj || descent.abs() < 1e-300;
                theta = trial_theta;
                eta = trial_eta;
                obj = trial_obj;
                break;
            }
            t *= 0.5;
        }
        if opts.trace {
            trace.push(obj);
        }
        if !accepted {
            // no further decrease available at machine precision
            eta = (f * &theta).iter().copied().collect();
            let prob: Vec<f64> = eta.iter().map(|&t| logistic(t)).collect();
            let grad: Vec<f64> = (0..p)
                .map(|j| {
                    let col = &data[j * n..(j + 1) * n];
                    col.iter().zip(prob.iter().zip(y)).map(|(v, (q, yi))| v * (q - yi)).sum::<f64>() / nf
                })
                .collect();
            kkt = kkt_violation(&theta, &grad, &thresholds);
            if kkt <= opts.kkt_tol {
                return Ok(LassoSolution {
                    theta,
                    objective: obj,
                    kkt_residual: kkt,
                    iterations: outer + 1,
                    trace,
                });
            }
            return Err(Error::NoConvergence {
                iterations: outer + 1,
                kkt_residual: kkt,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_NEWTON,
        kkt_residual: kkt,
    })
}

/// Unpenalized logistic refit on a support.
#[derive(Debug, Clone)]
pub struct LogisticRefit {
    pub theta: DVector<f64>,
    /// At least one coefficient was held at the separation cap.
    pub separation: bool,
    /// The Hessian was singular and a ridge jitter was added.
    pub jittered: bool,
    pub dropped: Vec<usize>,
    pub steps: usize,
}

/// Maximum-likelihood logistic refit on `support` by damped, box-projected
/// Newton steps. Coefficients are confined to `[-cap, cap]`; touching the
/// bound sets the separation flag.
pub fn refit_logistic(f: &DMatrix<f64>, y: &[f64], support: &[usize], cap: f64) -> Result<LogisticRefit> {
    let (n, p) = f.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("design has {n} rows, response {}", y.len())));
    }
    check_binary(y)?;
    if let Some(&j) = support.iter().find(|&&j| j >= p) {
        return Err(Error::InvalidInput(format!("support index {j} out of range")));
    }
    let mut theta = DVector::zeros(p);
    let mut out = LogisticRefit {
        theta: DVector::zeros(p),
        separation: false,
        jittered: false,
        dropped: Vec::new(),
        steps: 0,
    };
    if support.is_empty() {
        return Ok(out);
    }
    let sub = f.select_columns(support.iter());
    let keep = independent_columns(&sub, DEFAULT_COLLINEAR_TOL);
    out.dropped = (0..support.len()).filter(|k| !keep.contains(k)).map(|k| support[k]).collect();
    if keep.is_empty() {
        return Ok(out);
    }
    let x = sub.select_columns(keep.iter());
    let k = x.ncols();
    let yv = DVector::from_column_slice(y);
    let loglik = |eta: &DVector<f64>| -> f64 { eta.iter().zip(y).map(|(&t, &yi)| yi * t - log1p_exp(t)).sum() };

    let mut beta = DVector::<f64>::zeros(k);
    let mut eta = DVector::<f64>::zeros(n);
    let mut ll = loglik(&eta);
    let mut polish = false;
    for step in 0..REFIT_MAX_STEPS {
        out.steps = step + 1;
        let prob = eta.map(logistic);
        let w = prob.map(|q| q * (1.0 - q));
        let grad = x.transpose() * (&yv - &prob);
        let free: Vec<usize> = (0..k)
            .filter(|&j| !((beta[j] >= cap && grad[j] > 0.0) || (beta[j] <= -cap && grad[j] < 0.0)))
            .collect();
        if free.is_empty() {
            break;
        }
        let xf = x.select_columns(free.iter());
        let mut xw = xf.clone();
        for (mut col, _) in xw.column_iter_mut().zip(0..) {
            col.component_mul_assign(&w);
        }
        let mut hess = xf.transpose() * &xw;
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&j| grad[j]));
        let newton = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&gf),
            None => {
                out.jittered = true;
                let jitter = 1e-8 * hess.trace().max(1e-300);
                for j in 0..free.len() {
                    hess[(j, j)] += jitter;
                }
                match hess.cholesky() {
                    Some(ch) => ch.solve(&gf),
                    None => return Err(Error::Degenerate("logistic refit Hessian not positive definite".into())),
                }
            }
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let mut trial = beta.clone();
            for (a, &j) in free.iter().enumerate() {
                trial[j] = (beta[j] + t * newton[a]).clamp(-cap, cap);
            }
            let trial_eta = &x * &trial;
            let trial_ll = loglik(&trial_eta);
            if trial_ll >= ll {
                let rel = (trial_ll - ll).abs() / ll.abs().max(1e-300);
                beta = trial;
                eta = trial_eta;
                ll = trial_ll;
                moved = true;
                if beta.iter().any(|b| b.abs() >= cap) {
                    out.separation = true;
                }
                if rel < REFIT_REL_TOL {
                    // one extra full step sharpens the score after the stop rule fires
                    if polish {
                        t = 0.0;
                    }
                    polish = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !moved || t == 0.0 {
            break;
        }
    }
    for (a, &local) in keep.iter().enumerate() {
        theta[support[local]] = beta[a];
    }
    out.theta = theta;
    Ok(out)
}

/// l1-logistic Lasso and post-selection refit with iterated loadings.
pub fn fit_with_iterated_loadings_logistic(f: &DMatrix<f64>, y: &[f64], cfg: &PenaltyConfig) -> Result<PenalizedFit> {
    cfg.validate()?;
    let (n, p) = f.shape();
    let lambda = cfg.lambda(n, p)?;
    let opts = SolverOptions {
        kkt_tol: cfg.kkt_tol,
        ..SolverOptions::default()
    };
    let mut loadings = initial_loadings_logistic(f, cfg.loading_floor);
    for &j in &cfg.unpenalized {
        loadings[j] = 0.0;
    }
    let mut warm: Option<DVector<f64>> = None;
    let mut lasso_fallback = false;
    let mut separation = false;
    let mut k = 0;
    loop {
        k += 1;
        let sol = logistic_from(f, y, lambda, &loadings, &opts, warm.as_ref())?;
        let support = support_of(&sol.theta);
        let refit = refit_logistic(f, y, &support, SEPARATION_CAP)?;
        separation |= refit.separation;
        let done = k >= cfg.max_iter;
        let mut stop = done;
        if !done {
            let coef = if refit.dropped.is_empty() {
                &refit.theta
            } else {
                lasso_fallback = true;
                &sol.theta
            };
            let fitted = f * coef;
            let resid: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, t)| a - logistic(*t)).collect();
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
                link: Link::Logistic,
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
                separation_flag: separation,
            });
        }
        warm = Some(sol.theta);
    }
}
