//! Weighted-l1 penalized estimation with data-driven penalty loadings.
//!
//! Both links minimise `E_n[M(y, f'theta)] + (lambda / n) * sum_j l_j |theta_j|`
//! where `l_j` are the penalty loadings. The iterated-loadings drivers
//! alternate Lasso, Post-Lasso and a loading update from the Post-Lasso
//! residuals.

mod linear;
mod logistic;

pub use linear::{fit_lasso_linear, fit_with_iterated_loadings, initial_loadings_linear, refit_post_lasso};
pub use logistic::{
    fit_l1_logistic, fit_with_iterated_loadings_logistic, initial_loadings_logistic, logistic_loss, refit_logistic,
    LogisticRefit,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal_quantile;

/// `lambda = c * sqrt(n) * Phi^{-1}(1 - gamma / (2 p n^{d_u}))`.
pub fn penalty_level(n: usize, p: usize, d_u: u32, gamma: f64, c: f64) -> Result<f64> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("penalty level needs n, p >= 1".into()));
    }
    let nf = n as f64;
    let arg = 1.0 - gamma / (2.0 * p as f64 * nf.powi(d_u as i32));
    if !(arg > 0.0 && arg < 1.0) {
        return Err(Error::PenaltyDomain(arg));
    }
    Ok(c * nf.sqrt() * normal_quantile(arg))
}

/// Tuning of the penalty level and the loading iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    /// Slack constant, must exceed one.
    pub c: f64,
    /// Confidence tuning level; `None` means `0.1 / ln(n)`.
    pub gamma: Option<f64>,
    /// Dimension of the index set the penalty must hold uniformly over.
    pub d_u: u32,
    /// Upper bound on the number of Lasso/Post-Lasso rounds.
    pub max_iter: usize,
    pub loading_stop_tol: f64,
    /// Loadings are floored at this multiple of the column root-mean-square.
    pub loading_floor: f64,
    /// Column count used inside the penalty formula when it differs from the
    /// fitted design (for example `2p` for instrument-specific fits).
    pub penalty_dim: Option<usize>,
    /// Full-sample size behind the `gamma` default and the `n^{d_u}` term when
    /// the fit only sees a subsample; `sqrt(n)` always uses the fitted rows.
    pub reference_n: Option<usize>,
    /// Columns left out of the penalty.
    pub unpenalized: Vec<usize>,
    pub kkt_tol: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            c: 1.1,
            gamma: None,
            d_u: 0,
            max_iter: 15,
            loading_stop_tol: 1e-6,
            loading_floor: 1e-6,
            penalty_dim: None,
            reference_n: None,
            unpenalized: Vec::new(),
            kkt_tol: 1e-7,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 1.0) {
            return Err(Error::InvalidInput(format!("slack constant c must exceed 1, got {}", self.c)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return Err(Error::InvalidInput(format!("gamma must lie in (0, 1), got {g}")));
            }
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidInput("max_iter must be >= 1".into()));
        }
        Ok(())
    }

    pub fn gamma_for(&self, n: usize) -> f64 {
        self.gamma.unwrap_or_else(|| 0.1 / (n as f64).ln())
    }

    pub fn lambda(&self, n: usize, p: usize) -> Result<f64> {
        self.validate()?;
        let pdim = self.penalty_dim.unwrap_or(p);
        match self.reference_n {
            None => penalty_level(n, pdim, self.d_u, self.gamma_for(n), self.c),
            Some(m) => {
                // c sqrt(n) Phi^{-1}(1 - gamma / (2 p m^{d_u})) with gamma from m
                let base = penalty_level(m, pdim, self.d_u, self.gamma_for(m), self.c)?;
                Ok(base * (n as f64 / m as f64).sqrt())
            }
        }
    }
}

/// Inner solver controls shared by both links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub kkt_tol: f64,
    /// `None` means `max(10 p, 1000)`.
    pub max_sweeps: Option<usize>,
    /// Record the penalized objective after every sweep (linear) or outer
    /// Newton step (logistic).
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-7,
            max_sweeps: None,
            trace: false,
        }
    }
}

impl SolverOptions {
    fn sweep_limit(&self, p: usize) -> usize {
        self.max_sweeps.unwrap_or((10 * p).max(1000))
    }
}

/// A converged Lasso solution together with its optimality certificate.
#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub theta: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Linear,
    Logistic,
}

/// Result of a penalized fit with iterated loadings.
#[derive(Debug, Clone, Serialize)]
pub struct PenalizedFit {
    pub link: Link,
    pub theta_lasso: Vec<f64>,
    pub support: Vec<usize>,
    pub theta_post: Vec<f64>,
    pub loadings: Vec<f64>,
    pub lambda: f64,
    pub iterations_used: usize,
    pub objective_value: f64,
    pub kkt_residual: f64,
    /// Support columns removed from the refit as collinear.
    pub refit_dropped: Vec<usize>,
    /// A loading update fell back to Lasso residuals after a singular refit.
    pub lasso_residual_loadings: bool,
    /// The logistic refit hit the coefficient cap.
    pub separation_flag: bool,
}

/// Logistic fits share the layout of [`PenalizedFit`] with `link = Logistic`.
pub type LogisticFit = PenalizedFit;

impl PenalizedFit {
    /// Post-Lasso index `f(x)'theta_post` for every row of `f`.
    pub fn post_index(&self, f: &DMatrix<f64>) -> DVector<f64> {
        f * DVector::from_column_slice(&self.theta_post)
    }

    /// Post-Lasso prediction on the response scale.
    pub fn predict(&self, f: &DMatrix<f64>) -> DVector<f64> {
        let idx = self.post_index(f);
        match self.link {
            Link::Linear => idx,
            Link::Logistic => idx.map(crate::stats::logistic),
        }
    }

    pub fn diagnostics_json(&self) -> serde_json::Value {
        serde_json::json!({
            "link": self.link,
            "lambda": self.lambda,
            "loadings": self.loadings,
            "support": self.support,
            "kkt_residual": self.kkt_residual,
            "iterations_used": self.iterations_used,
            "refit_dropped": self.refit_dropped,
            "separation_flag": self.separation_flag,
        })
    }
}

/// `E_n[f_j^2]` for every column.
pub(crate) fn column_mean_squares(f: &DMatrix<f64>) -> Vec<f64> {
    let n = f.nrows() as f64;
    f.column_iter().map(|c| c.norm_squared() / n).collect()
}

/// `{E_n[f_j^2 r^2]}^{1/2}` per column, floored, with unpenalized columns at zero.
pub(crate) fn residual_loadings(f: &DMatrix<f64>, resid: &[f64], floor: f64, unpenalized: &[usize]) -> Vec<f64> {
    let n = f.nrows() as f64;
    let r2: Vec<f64> = resid.iter().map(|r| r * r).collect();
    let ms = column_mean_squares(f);
    f.column_iter()
        .enumerate()
        .map(|(j, col)| {
            if unpenalized.contains(&j) {
                return 0.0;
            }
            let raw = (col.iter().zip(&r2).map(|(v, r)| v * v * r).sum::<f64>() / n).sqrt();
            raw.max(floor * ms[j].sqrt())
        })
        .collect()
}

pub(crate) fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Largest violation of the weighted-l1 stationarity conditions given the
/// gradient `grad` of the smooth part and per-coordinate thresholds.
pub(crate) fn kkt_violation(theta: &DVector<f64>, grad: &[f64], thresholds: &[f64]) -> f64 {
    theta
        .iter()
        .zip(grad)
        .zip(thresholds)
        .map(|((&t, &g), &lam)| {
            if t == 0.0 {
                (g.abs() - lam).max(0.0)
            } else {
                (g + t.signum() * lam).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub(crate) fn support_of(theta: &DVector<f64>) -> Vec<usize> {
    theta.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, _)| j).collect()
}

pub(crate) fn check_design(f: &DMatrix<f64>, y: &[f64], loadings: &[f64]) -> Result<()> {
    if f.nrows() != y.len() {
        return Err(Error::Dimension(format!("design has {} rows, response {}", f.nrows(), y.len())));
    }
    if loadings.len() != f.ncols() {
        return Err(Error::Dimension(format!("{} loadings for {} columns", loadings.len(), f.ncols())));
    }
    if f.nrows() == 0 {
        return Err(Error::InvalidInput("empty design".into()));
    }
    if f.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite design or response".into()));
    }
    if loadings.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::InvalidInput("loadings must be finite and non-negative".into()));
    }
    Ok(())
}
