//! Structural functionals of the reduced form: local average structural
//! functions and their treated variants, LATE/ATE, distribution curves and
//! quantile effects obtained by left-inverting those curves.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduced_form::{ReducedForm, RhoRef, TargetVariable};
use crate::stats::quantile;

/// Default lower bound on the magnitude of a first-stage denominator.
pub const DEFAULT_DENOM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "LASF")]
    Lasf,
    #[serde(rename = "LASF-T")]
    LasfT,
    #[serde(rename = "LDTE")]
    Ldte,
    #[serde(rename = "LQTE")]
    Lqte,
    #[serde(rename = "LDTE-T")]
    LdteT,
    #[serde(rename = "LQTE-T")]
    LqteT,
    #[serde(rename = "LATE")]
    Late,
    #[serde(rename = "LATE-T")]
    LateT,
    #[serde(rename = "ATE")]
    Ate,
    #[serde(rename = "ATE-T")]
    AteT,
    #[serde(rename = "QTE")]
    Qte,
    #[serde(rename = "QTE-T")]
    QteT,
}

impl Estimand {
    pub const ALL: [Estimand; 12] = [
        Estimand::Lasf,
        Estimand::LasfT,
        Estimand::Ldte,
        Estimand::Lqte,
        Estimand::LdteT,
        Estimand::LqteT,
        Estimand::Late,
        Estimand::LateT,
        Estimand::Ate,
        Estimand::AteT,
        Estimand::Qte,
        Estimand::QteT,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimand::Lasf => "LASF",
            Estimand::LasfT => "LASF-T",
            Estimand::Ldte => "LDTE",
            Estimand::Lqte => "LQTE",
            Estimand::LdteT => "LDTE-T",
            Estimand::LqteT => "LQTE-T",
            Estimand::Late => "LATE",
            Estimand::LateT => "LATE-T",
            Estimand::Ate => "ATE",
            Estimand::AteT => "ATE-T",
            Estimand::Qte => "QTE",
            Estimand::QteT => "QTE-T",
        }
    }

    /// Scalar estimands computed on the level outcome.
    pub fn is_scalar(&self) -> bool {
        matches!(self, Estimand::Late | Estimand::LateT | Estimand::Ate | Estimand::AteT)
    }

    /// Whether the estimand is on the treated rather than on compliers.
    pub fn on_treated(&self) -> bool {
        matches!(
            self,
            Estimand::LasfT | Estimand::LdteT | Estimand::LqteT | Estimand::LateT | Estimand::AteT | Estimand::QteT
        )
    }

    /// Estimands that only make sense when treatment is its own instrument.
    pub fn requires_exogenous(&self) -> bool {
        matches!(self, Estimand::Ate | Estimand::AteT | Estimand::Qte | Estimand::QteT)
    }
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        Estimand::ALL
            .into_iter()
            .find(|e| e.name() == up)
            .ok_or_else(|| Error::Config(format!("unknown estimand `{s}`")))
    }
}

/// Per-point status of a curve value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointFlag {
    Ok,
    /// The quantile lies below the curve's left endpoint value; the left grid
    /// endpoint was returned.
    BelowRange,
    /// The curve never reaches the quantile; the value is NaN.
    Unreached,
}

/// A structural function evaluated on an index grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectCurve {
    pub estimand: Estimand,
    pub arm: Option<u8>,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub flags: Vec<PointFlag>,
}

impl EffectCurve {
    pub fn new(estimand: Estimand, arm: Option<u8>, grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::Dimension("curve grid and values differ in length".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("curve grid must be strictly increasing".into()));
        }
        let flags = vec![PointFlag::Ok; grid.len()];
        Ok(Self {
            estimand,
            arm,
            grid,
            values,
            flags,
        })
    }
}

/// Quantile indices, `0.10, 0.11, ..., 0.90` by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid(pub Vec<f64>);

impl Default for QuantileGrid {
    fn default() -> Self {
        Self::range(0.10, 0.90, 0.01)
    }
}

impl QuantileGrid {
    /// Evenly spaced grid including both endpoints.
    pub fn range(lo: f64, hi: f64, step: f64) -> Self {
        let count = ((hi - lo) / step + 0.5).floor() as usize;
        Self((0..=count).map(|k| round_grid(lo + k as f64 * step)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.is_empty() || self.0.iter().any(|&t| !(t > 0.0 && t < 1.0)) || self.0.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("quantile grid must be increasing inside (0, 1)".into()));
        }
        Ok(())
    }
}

// keep 0.1 + 7 * 0.01 printing as 0.17
fn round_grid(x: f64) -> f64 {
    (x * 1e10).round() / 1e10
}

/// Thresholds `u` at the outcome's sample percentiles between `lo` and `hi`
/// (type-7 quantiles), with duplicates removed.
pub fn outcome_grid(y: &[f64], lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let mut grid: Vec<f64> = QuantileGrid::range(lo, hi, step).0.iter().map(|&p| quantile(y, p)).collect();
    grid.dedup();
    grid
}

fn ratio(num: f64, den: f64, tol: f64) -> Result<f64> {
    if !(den.abs() > tol) {
        return Err(Error::WeakDenominator { value: den, tol });
    }
    Ok(num / den)
}

/// Local average structural function
/// `(alpha_{1_d(D)Y}(1) - alpha_{1_d(D)Y}(0)) / (alpha_{1_d(D)}(1) - alpha_{1_d(D)}(0))`.
pub fn lasf(rho: &RhoRef<'_>, d: u8, denom_tol: f64) -> Result<f64> {
    let yv = TargetVariable::ArmOutcome(d);
    let dv = TargetVariable::ArmIndicator(d);
    let num = rho.alpha(yv, 1)? - rho.alpha(yv, 0)?;
    let den = rho.alpha(dv, 1)? - rho.alpha(dv, 0)?;
    ratio(num, den, denom_tol)
}

fn alpha_outcome(rho: &RhoRef<'_>, z: u8) -> Result<f64> {
    match rho.alpha(TargetVariable::Outcome, z) {
        Ok(v) => Ok(v),
        Err(_) => Ok(rho.alpha(TargetVariable::ArmOutcome(1), z)? + rho.alpha(TargetVariable::ArmOutcome(0), z)?),
    }
}

/// `(alpha_Y(1) - alpha_Y(0)) / (alpha_{1_1(D)}(1) - alpha_{1_1(D)}(0))`.
pub fn late(rho: &RhoRef<'_>, denom_tol: f64) -> Result<f64> {
    let dv = TargetVariable::ArmIndicator(1);
    let num = alpha_outcome(rho, 1)? - alpha_outcome(rho, 0)?;
    let den = rho.alpha(dv, 1)? - rho.alpha(dv, 0)?;
    ratio(num, den, denom_tol)
}

/// Structural function on the treated
/// `(gamma_{1_d(D)Y} - alpha_{1_d(D)Y}(0)) / (gamma_{1_d(D)} - alpha_{1_d(D)}(0))`.
pub fn lasf_t(rho: &RhoRef<'_>, d: u8, denom_tol: f64) -> Result<f64> {
    let yv = TargetVariable::ArmOutcome(d);
    let dv = TargetVariable::ArmIndicator(d);
    let num = rho.gamma(yv)? - rho.alpha(yv, 0)?;
    let den = rho.gamma(dv)? - rho.alpha(dv, 0)?;
    ratio(num, den, denom_tol)
}

pub fn late_t(rho: &RhoRef<'_>, denom_tol: f64) -> Result<f64> {
    Ok(lasf_t(rho, 1, denom_tol)? - lasf_t(rho, 0, denom_tol)?)
}

/// Complier or treated-complier population for distribution curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Local,
    LocalTreated,
}

/// Pointwise `u -> theta_{Y_u}(d)` over the reduced form's thresholds.
pub fn distribution_curve(reduced: &ReducedForm, d: u8, kind: CurveKind, denom_tol: f64) -> Result<EffectCurve> {
    let grid = reduced.u_grid();
    if grid.len() != reduced.slices.len() {
        return Err(Error::InvalidInput("distribution curve needs a threshold grid".into()));
    }
    let views: Vec<RhoRef<'_>> = reduced.slices.iter().map(|s| s.view()).collect();
    let values = curve_values(&views, d, kind, denom_tol)?;
    let estimand = match kind {
        CurveKind::Local => Estimand::Lasf,
        CurveKind::LocalTreated => Estimand::LasfT,
    };
    EffectCurve::new(estimand, Some(d), grid, values)
}

/// The curve values for an arbitrary set of reduced-form vectors (point
/// estimates or a bootstrap draw), one per threshold.
pub fn curve_values(views: &[RhoRef<'_>], d: u8, kind: CurveKind, denom_tol: f64) -> Result<Vec<f64>> {
    views
        .iter()
        .map(|r| match kind {
            CurveKind::Local => lasf(r, d, denom_tol),
            CurveKind::LocalTreated => lasf_t(r, d, denom_tol),
        })
        .collect()
}

/// Left inverse of the piecewise-linear interpolant through `(grid, values)`
/// at level `tau`: the smallest `u` with interpolated value `>= tau`.
pub fn invert_at(grid: &[f64], values: &[f64], tau: f64) -> (f64, PointFlag) {
    if values[0] >= tau {
        let flag = if values[0] > tau {
            PointFlag::BelowRange
        } else {
            PointFlag::Ok
        };
        return (grid[0], flag);
    }
    for k in 0..grid.len() - 1 {
        let (f0, f1) = (values[k], values[k + 1]);
        if f1 >= tau {
            // f0 < tau here, so the segment rises through tau
            let frac = (tau - f0) / (f1 - f0);
            let u = (grid[k] + frac * (grid[k + 1] - grid[k])).clamp(grid[k], grid[k + 1]);
            return (u, PointFlag::Ok);
        }
    }
    (f64::NAN, PointFlag::Unreached)
}

/// Quantile left-inverse of a distribution curve on the `taus` grid.
pub fn quantile_invert(curve: &EffectCurve, taus: &QuantileGrid) -> Result<EffectCurve> {
    if curve.grid.len() < 2 {
        return Err(Error::InvalidInput("quantile inversion needs at least two curve points".into()));
    }
    taus.validate()?;
    let (values, flags): (Vec<f64>, Vec<PointFlag>) = taus.0.iter().map(|&t| invert_at(&curve.grid, &curve.values, t)).unzip();
    let estimand = if curve.estimand == Estimand::LasfT {
        Estimand::LqteT
    } else {
        Estimand::Lqte
    };
    Ok(EffectCurve {
        estimand,
        arm: curve.arm,
        grid: taus.0.clone(),
        values,
        flags,
    })
}

/// `theta^{<-}(tau, 1) - theta^{<-}(tau, 0)` on the shared quantile grid.
pub fn lqte(treated: &EffectCurve, control: &EffectCurve, taus: &QuantileGrid) -> Result<EffectCurve> {
    let q1 = quantile_invert(treated, taus)?;
    let q0 = quantile_invert(control, taus)?;
    let values = q1.values.iter().zip(&q0.values).map(|(a, b)| a - b).collect();
    let flags = q1.flags.iter().zip(&q0.flags).map(|(a, b)| *a.max(b)).collect();
    Ok(EffectCurve {
        estimand: q1.estimand,
        arm: None,
        grid: taus.0.clone(),
        values,
        flags,
    })
}

/// Pointwise difference of the two arms' distribution curves.
pub fn distribution_effect(treated: &EffectCurve, control: &EffectCurve) -> Result<EffectCurve> {
    if treated.grid != control.grid {
        return Err(Error::Dimension("arms use different threshold grids".into()));
    }
    let estimand = if treated.estimand == Estimand::LasfT {
        Estimand::LdteT
    } else {
        Estimand::Ldte
    };
    let values = treated.values.iter().zip(&control.values).map(|(a, b)| a - b).collect();
    EffectCurve::new(estimand, None, treated.grid.clone(), values)
}
