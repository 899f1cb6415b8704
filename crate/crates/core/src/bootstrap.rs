//! Multiplier bootstrap over estimated influence functions.
//!
//! A draw of the reduced form is `rho* = rho + E_n[xi * psi]` with iid
//! multipliers `xi` (mean zero, unit variance). Effects are obtained by
//! applying the plug-in functional to each draw. Every draw has its own
//! seed derived from the master seed and the draw index, so results do not
//! depend on evaluation order.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduced_form::{ReducedForm, RhoRef};
use crate::stats::{normal_quantile, quantile, quantile_sorted};

/// Default number of bootstrap replications.
pub const DEFAULT_REPLICATIONS: usize = 500;

/// Flagged-draw share above which a result carries a warning.
pub const FLAGGED_WARNING_SHARE: f64 = 0.05;

/// Law of the multiplier `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierKind {
    /// `xi = E - 1` with `E` standard exponential.
    Bayesian,
    /// `xi = N`.
    Gaussian,
    /// `xi = N1 / sqrt(2) + (N2^2 - 1) / 2`, matching three moments.
    Wild,
}

/// Whether weights are returned centred (`xi`) or as `w = 1 + xi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Mean0,
    Mean1,
}

/// Seed of draw `index` under `master`; a SplitMix64 finaliser over both.
pub fn draw_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` iid multipliers from `seed`.
pub fn draw_weights(kind: MultiplierKind, param: Parameterization, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let xi = match kind {
                MultiplierKind::Bayesian => rng.sample::<f64, _>(Exp1) - 1.0,
                MultiplierKind::Gaussian => rng.sample::<f64, _>(StandardNormal),
                MultiplierKind::Wild => {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    a / std::f64::consts::SQRT_2 + (b * b - 1.0) / 2.0
                }
            };
            match param {
                Parameterization::Mean0 => xi,
                Parameterization::Mean1 => 1.0 + xi,
            }
        })
        .collect()
}

/// Settings for a bootstrap run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub kind: MultiplierKind,
    pub parameterization: Parameterization,
    pub seed: u64,
    /// Coverage of confidence bands.
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replications: DEFAULT_REPLICATIONS,
            kind: MultiplierKind::Wild,
            parameterization: Parameterization::Mean1,
            seed: 20_140_901,
            level: 0.95,
        }
    }
}

/// Bootstrap draws of some vector-valued statistic.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// `B x dim`; rows of flagged draws are NaN.
    pub draws: DMatrix<f64>,
    pub master_seed: u64,
    pub draw_seeds: Vec<u64>,
    pub flagged: Vec<bool>,
    /// First error message per flagged draw.
    pub errors: Vec<Option<String>>,
}

impl BootstrapResult {
    pub fn replications(&self) -> usize {
        self.draws.nrows()
    }

    pub fn flagged_fraction(&self) -> f64 {
        if self.flagged.is_empty() {
            return 0.0;
        }
        self.flagged.iter().filter(|f| **f).count() as f64 / self.flagged.len() as f64
    }

    pub fn warning(&self) -> bool {
        self.flagged_fraction() > FLAGGED_WARNING_SHARE
    }

    /// Unflagged draws of component `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.draws.nrows())
            .filter(|&b| !self.flagged[b])
            .map(|b| self.draws[(b, j)])
            .collect()
    }

    /// Unflagged draws as rows.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.draws.nrows())
            .filter(|&b| !self.flagged[b])
            .map(|b| self.draws.row(b).iter().copied().collect())
            .collect()
    }
}

const CHUNK: usize = 64;

/// `E_n[w_b * psi]` for a block of draws, one row per draw.
fn weighted_means(psi: &DMatrix<f64>, kind: MultiplierKind, param: Parameterization, seeds: &[u64]) -> DMatrix<f64> {
    let n = psi.nrows();
    let mut w = DMatrix::zeros(seeds.len(), n);
    let rows: Vec<Vec<f64>> = seeds.par_iter().map(|&s| draw_weights(kind, param, n, s)).collect();
    for (b, r) in rows.iter().enumerate() {
        for (i, v) in r.iter().enumerate() {
            w[(b, i)] = *v;
        }
    }
    (w * psi) / n as f64
}

/// Draws `rho* = rho + E_n[xi psi]` (mean-zero multipliers).
pub fn bootstrap_reduced_form(
    rho: &[f64],
    psi: &DMatrix<f64>,
    replications: usize,
    kind: MultiplierKind,
    seed: u64,
) -> Result<BootstrapResult> {
    if psi.ncols() != rho.len() {
        return Err(Error::Dimension(format!("{} influence columns for {} parameters", psi.ncols(), rho.len())));
    }
    let seeds: Vec<u64> = (0..replications as u64).map(|b| draw_seed(seed, b)).collect();
    let mut draws = DMatrix::zeros(replications, rho.len());
    for (c, chunk) in seeds.chunks(CHUNK).enumerate() {
        let m = weighted_means(psi, kind, Parameterization::Mean0, chunk);
        for r in 0..chunk.len() {
            for k in 0..rho.len() {
                draws[(c * CHUNK + r, k)] = rho[k] + m[(r, k)];
            }
        }
    }
    Ok(BootstrapResult {
        draws,
        master_seed: seed,
        flagged: vec![false; replications],
        errors: vec![None; replications],
        draw_seeds: seeds,
    })
}

/// Applies a plug-in functional to bootstrap draws of every slice of the
/// reduced form. All slices share the multipliers of a draw.
///
/// Under `Mean0` a slice draw is `rho + E_n[xi psi]`; under `Mean1` it is
/// `E_n[w (psi + rho)]` with `w = 1 + xi`, the weighted-integrand form whose
/// ratios reproduce the weighted-ratio bootstrap of LATE and LQTE.
/// A functional error or a NaN output flags the draw.
pub fn bootstrap_effects<F>(reduced: &ReducedForm, functional: F, cfg: &BootstrapConfig) -> Result<BootstrapResult>
where
    F: Fn(&[RhoRef<'_>]) -> Result<Vec<f64>> + Sync,
{
    if reduced.slices.is_empty() {
        return Err(Error::InvalidInput("empty reduced form".into()));
    }
    let n = reduced.n();
    let widths: Vec<usize> = reduced.slices.iter().map(|s| s.rho.len()).collect();
    let total: usize = widths.iter().sum();
    let mut psi = DMatrix::zeros(n, total);
    let mut rho = Vec::with_capacity(total);
    let mut off = 0;
    for s in &reduced.slices {
        psi.columns_mut(off, s.rho.len()).copy_from(&s.psi);
        rho.extend_from_slice(&s.rho);
        off += s.rho.len();
    }
    let seeds: Vec<u64> = (0..cfg.replications as u64).map(|b| draw_seed(cfg.seed, b)).collect();
    let point_views: Vec<RhoRef<'_>> = reduced.slices.iter().map(|s| s.view()).collect();
    let dim = functional(&point_views)?.len();

    let mut draws = DMatrix::from_element(cfg.replications, dim, f64::NAN);
    let mut flagged = vec![false; cfg.replications];
    let mut errors = vec![None; cfg.replications];
    for (c, chunk) in seeds.chunks(CHUNK).enumerate() {
        let m = weighted_means(&psi, cfg.kind, Parameterization::Mean0, chunk);
        let mean_xi: Vec<f64> = match cfg.parameterization {
            Parameterization::Mean0 => vec![0.0; chunk.len()],
            Parameterization::Mean1 => chunk
                .par_iter()
                .map(|&s| {
                    let w = draw_weights(cfg.kind, Parameterization::Mean0, n, s);
                    w.iter().sum::<f64>() / n as f64
                })
                .collect(),
        };
        let outcomes: Vec<Result<Vec<f64>>> = (0..chunk.len())
            .into_par_iter()
            .map(|r| {
                let values: Vec<f64> = (0..total).map(|k| rho[k] * (1.0 + mean_xi[r]) + m[(r, k)]).collect();
                let mut views = Vec::with_capacity(widths.len());
                let mut off = 0;
                for (s, &w) in reduced.slices.iter().zip(&widths) {
                    views.push(RhoRef {
                        layout: &s.layout,
                        values: &values[off..off + w],
                    });
                    off += w;
                }
                functional(&views)
            })
            .collect();
        for (r, out) in outcomes.into_iter().enumerate() {
            let b = c * CHUNK + r;
            match out {
                Ok(v) if v.len() == dim && v.iter().all(|x| x.is_finite()) => {
                    for (j, x) in v.into_iter().enumerate() {
                        draws[(b, j)] = x;
                    }
                }
                Ok(v) => {
                    flagged[b] = true;
                    errors[b] = Some(format!("non-finite or misshapen output ({} values)", v.len()));
                }
                Err(e) => {
                    flagged[b] = true;
                    errors[b] = Some(e.to_string());
                }
            }
        }
    }
    Ok(BootstrapResult {
        draws,
        master_seed: cfg.seed,
        draw_seeds: seeds,
        flagged,
        errors,
    })
}

/// `sqrt( sum_i (c_i / denom - Delta)^2 / (n - 1) / n )` with
/// `Delta = mean(c) / denom`, where `c` holds the per-observation
/// moment-integrand contrasts.
pub fn se_analytic(contrast: &[f64], denom: f64) -> Result<f64> {
    let n = contrast.len();
    if n < 2 {
        return Err(Error::InvalidInput("analytic standard error needs n >= 2".into()));
    }
    let scaled: Vec<f64> = contrast.iter().map(|c| c / denom).collect();
    let delta = scaled.iter().sum::<f64>() / n as f64;
    let ss: f64 = scaled.iter().map(|v| (v - delta).powi(2)).sum();
    Ok((ss / (n - 1) as f64 / n as f64).sqrt())
}

/// Bootstrap interquartile range rescaled by the normal interquartile range.
pub fn se_iqr(draws: &[f64]) -> Result<f64> {
    let mut v: Vec<f64> = draws.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.len() < 4 {
        return Err(Error::InvalidInput("IQR standard error needs at least four draws".into()));
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    Ok(iqr / (normal_quantile(0.75) - normal_quantile(0.25)))
}

/// Pointwise and uniform (max-|t|) confidence bands over an index grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bands {
    pub estimates: Vec<f64>,
    pub se: Vec<f64>,
    /// Level-quantile of `max_q |t_b(q)|` over bootstrap draws.
    pub cv_uniform: f64,
    /// Level-quantile of `|t_b(q)|` at each point separately.
    pub cv_pointwise_bootstrap: Vec<f64>,
    /// Normal critical value used for the pointwise band.
    pub cv_normal: f64,
    /// Points with `s(q) = 0` that were left out of the max.
    pub excluded: Vec<bool>,
    pub uniform_lower: Vec<f64>,
    pub uniform_upper: Vec<f64>,
    pub pointwise_lower: Vec<f64>,
    pub pointwise_upper: Vec<f64>,
}

/// Bands from bootstrap draws (`draws[b][q]`), with `s(q)` the IQR-based
/// bootstrap standard error.
pub fn uniform_band(estimates: &[f64], draws: &[Vec<f64>], level: f64) -> Result<Bands> {
    let q = estimates.len();
    if draws.iter().any(|d| d.len() != q) {
        return Err(Error::Dimension("draw length differs from estimate length".into()));
    }
    let se: Vec<f64> = (0..q)
        .map(|j| se_iqr(&draws.iter().map(|d| d[j]).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    uniform_band_with_se(estimates, draws, &se, level)
}

/// As [`uniform_band`] with caller-supplied standard errors.
pub fn uniform_band_with_se(estimates: &[f64], draws: &[Vec<f64>], se: &[f64], level: f64) -> Result<Bands> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("band level must lie in (0, 1), got {level}")));
    }
    let q = estimates.len();
    if se.len() != q {
        return Err(Error::Dimension("standard errors differ in length from estimates".into()));
    }
    let excluded: Vec<bool> = se.iter().map(|s| !(*s > 0.0)).collect();
    let cv_normal = normal_quantile(1.0 - (1.0 - level) / 2.0);
    let mut cv_point = vec![0.0; q];
    let cv_uniform = if excluded.iter().all(|e| *e) {
        let degenerate = draws
            .iter()
            .all(|d| d.iter().zip(estimates).all(|(a, b)| a == b));
        if !degenerate {
            return Err(Error::Degenerate("every grid point has zero bootstrap standard error".into()));
        }
        0.0
    } else {
        let tmax: Vec<f64> = draws
            .iter()
            .map(|d| {
                (0..q)
                    .filter(|&j| !excluded[j])
                    .map(|j| ((d[j] - estimates[j]) / se[j]).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        for j in 0..q {
            if !excluded[j] {
                let t: Vec<f64> = draws.iter().map(|d| ((d[j] - estimates[j]) / se[j]).abs()).collect();
                cv_point[j] = quantile(&t, level);
            }
        }
        quantile(&tmax, level)
    };
    let width = |s: f64, cv: f64| if s > 0.0 { cv * s } else { 0.0 };
    Ok(Bands {
        estimates: estimates.to_vec(),
        se: se.to_vec(),
        cv_uniform,
        cv_pointwise_bootstrap: cv_point,
        cv_normal,
        uniform_lower: (0..q).map(|j| estimates[j] - width(se[j], cv_uniform)).collect(),
        uniform_upper: (0..q).map(|j| estimates[j] + width(se[j], cv_uniform)).collect(),
        pointwise_lower: (0..q).map(|j| estimates[j] - width(se[j], cv_normal)).collect(),
        pointwise_upper: (0..q).map(|j| estimates[j] + width(se[j], cv_normal)).collect(),
        excluded,
    })
}
