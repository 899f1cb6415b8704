//! Reduced-form parameters from orthogonal moment conditions.
//!
//! For a target variable `V` and instrument value `z` the estimator is the
//! zero of the sample moment
//! `E_n[1(Z = z)(V - g(z, X)) / m(z, X) + g(z, X) - alpha]`, and the plain
//! mean for `gamma_V`. The per-observation integrands minus the estimates
//! are kept as influence values for the multiplier bootstrap.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default clamp for estimated instrument propensities.
pub const DEFAULT_TRIM_EPS: f64 = 1e-12;

/// One member of the five-variable family built on an outcome `Y_u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetVariable {
    /// `Y_u`
    Outcome,
    /// `1_d(D) Y_u`
    ArmOutcome(u8),
    /// `1_d(D)`
    ArmIndicator(u8),
}

impl TargetVariable {
    /// `(Y_u, 1_0(D)Y_u, 1_0(D), 1_1(D)Y_u, 1_1(D))`.
    pub const FAMILY: [TargetVariable; 5] = [
        TargetVariable::Outcome,
        TargetVariable::ArmOutcome(0),
        TargetVariable::ArmIndicator(0),
        TargetVariable::ArmOutcome(1),
        TargetVariable::ArmIndicator(1),
    ];

    /// Realised values of the variable given the outcome column `y_u`.
    pub fn values(&self, y_u: &[f64], d: &[f64]) -> Vec<f64> {
        let arm = |di: f64, a: u8| if di == a as f64 { 1.0 } else { 0.0 };
        match *self {
            TargetVariable::Outcome => y_u.to_vec(),
            TargetVariable::ArmOutcome(a) => y_u.iter().zip(d).map(|(y, &di)| arm(di, a) * y).collect(),
            TargetVariable::ArmIndicator(a) => d.iter().map(|&di| arm(di, a)).collect(),
        }
    }

    /// Whether the variable only takes values in {0, 1} when `Y_u` does.
    pub fn is_indicator_of_treatment(&self) -> bool {
        matches!(self, TargetVariable::ArmIndicator(_))
    }
}

impl fmt::Display for TargetVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetVariable::Outcome => write!(f, "Y"),
            TargetVariable::ArmOutcome(a) => write!(f, "1{{D={a}}}Y"),
            TargetVariable::ArmIndicator(a) => write!(f, "1{{D={a}}}"),
        }
    }
}

/// Which reduced-form parameter of a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moment {
    Alpha(u8),
    Gamma,
}

impl Moment {
    fn offset(self) -> usize {
        match self {
            Moment::Alpha(0) => 0,
            Moment::Alpha(_) => 1,
            Moment::Gamma => 2,
        }
    }
}

/// Ordering of the reduced-form vector: three entries
/// `(alpha(0), alpha(1), gamma)` per variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Layout {
    pub variables: Vec<TargetVariable>,
}

impl Layout {
    pub fn new(variables: Vec<TargetVariable>) -> Self {
        Self { variables }
    }

    pub fn full() -> Self {
        Self::new(TargetVariable::FAMILY.to_vec())
    }

    pub fn dim(&self) -> usize {
        3 * self.variables.len()
    }

    pub fn index(&self, v: TargetVariable, m: Moment) -> Option<usize> {
        self.variables.iter().position(|&w| w == v).map(|k| 3 * k + m.offset())
    }

    pub fn labels(&self) -> Vec<String> {
        self.variables
            .iter()
            .flat_map(|v| [format!("alpha_{v}(0)"), format!("alpha_{v}(1)"), format!("gamma_{v}")])
            .collect()
    }
}

/// Borrowed view of one reduced-form vector (a point estimate or a draw).
#[derive(Debug, Clone, Copy)]
pub struct RhoRef<'a> {
    pub layout: &'a Layout,
    pub values: &'a [f64],
}

impl<'a> RhoRef<'a> {
    pub fn get(&self, v: TargetVariable, m: Moment) -> Result<f64> {
        self.layout
            .index(v, m)
            .map(|k| self.values[k])
            .ok_or_else(|| Error::MissingNuisance(format!("{m:?} of {v}")))
    }

    pub fn alpha(&self, v: TargetVariable, z: u8) -> Result<f64> {
        self.get(v, Moment::Alpha(z))
    }

    pub fn gamma(&self, v: TargetVariable) -> Result<f64> {
        self.get(v, Moment::Gamma)
    }
}

/// Estimated instrument propensity `m(1, x_i)` after trimming.
#[derive(Debug, Clone, PartialEq)]
pub struct Propensity {
    pub values: Vec<f64>,
    pub trimmed: usize,
    pub eps: f64,
}

impl Propensity {
    pub fn new(raw: &[f64], eps: f64) -> Result<Self> {
        let (values, trimmed) = trim_propensity(raw, eps)?;
        Ok(Self { values, trimmed, eps })
    }

    /// `m(z, x_i)`: the propensity for `z = 1`, its complement for `z = 0`.
    pub fn at(&self, z: u8, i: usize) -> f64 {
        if z == 1 {
            self.values[i]
        } else {
            1.0 - self.values[i]
        }
    }
}

/// Clamps every value into `[eps, 1 - eps]` and counts the clamped entries.
pub fn trim_propensity(mhat: &[f64], eps: f64) -> Result<(Vec<f64>, usize)> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidInput(format!("trim eps must lie in (0, 1/2), got {eps}")));
    }
    let mut count = 0;
    let out = mhat
        .iter()
        .map(|&m| {
            let c = m.clamp(eps, 1.0 - eps);
            if c != m {
                count += 1;
            }
            c
        })
        .collect();
    Ok((out, count))
}

/// Where a regression cell came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Index into the caller's fit registry.
    Fit(usize),
    /// Declared identically equal to a constant.
    Known(f64),
    /// One minus another cell.
    Complement,
    Supplied,
}

/// Fitted `g_V(z, x_i)` for every row, keyed by `(V, z)`, plus the shared
/// propensity.
#[derive(Debug, Clone)]
pub struct NuisanceSet {
    pub propensity: Arc<Propensity>,
    pub cells: BTreeMap<(TargetVariable, u8), Vec<f64>>,
    pub provenance: BTreeMap<(TargetVariable, u8), Provenance>,
}

impl NuisanceSet {
    pub fn new(propensity: Arc<Propensity>) -> Self {
        Self {
            propensity,
            cells: BTreeMap::new(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, v: TargetVariable, z: u8, values: Vec<f64>, provenance: Provenance) {
        self.cells.insert((v, z), values);
        self.provenance.insert((v, z), provenance);
    }

    pub fn insert_known(&mut self, v: TargetVariable, z: u8, value: f64) {
        let n = self.propensity.values.len();
        self.insert(v, z, vec![value; n], Provenance::Known(value));
    }

    pub fn cell(&self, v: TargetVariable, z: u8) -> Result<&[f64]> {
        self.cells
            .get(&(v, z))
            .map(|c| c.as_slice())
            .ok_or_else(|| Error::MissingNuisance(format!("g_{v}(z={z}, x)")))
    }
}

/// Orthogonal-moment estimate of `alpha_V(z0)` and its influence column.
pub fn estimate_alpha(v: &[f64], z: &[f64], z0: u8, g: &[f64], propensity: &Propensity) -> (f64, Vec<f64>) {
    let n = v.len();
    assert!(z.len() == n && g.len() == n && propensity.values.len() == n, "misaligned nuisance");
    let zf = z0 as f64;
    let integrand: Vec<f64> = (0..n)
        .map(|i| {
            let ind = if z[i] == zf { 1.0 } else { 0.0 };
            let val = ind * (v[i] - g[i]) / propensity.at(z0, i) + g[i];
            assert!(val.is_finite(), "non-finite moment integrand at row {i}");
            val
        })
        .collect();
    center(integrand)
}

/// Sample mean of `V` and the centred values.
pub fn estimate_gamma(v: &[f64]) -> (f64, Vec<f64>) {
    center(v.to_vec())
}

fn center(mut x: Vec<f64>) -> (f64, Vec<f64>) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= m);
    (m, x)
}

/// Reduced-form estimates for one outcome definition `Y_u`.
#[derive(Debug, Clone)]
pub struct ReducedSlice {
    /// Threshold `u` for distribution outcomes, `None` for the level outcome.
    pub threshold: Option<f64>,
    pub layout: Arc<Layout>,
    pub rho: Vec<f64>,
    /// `n x dim` influence values.
    pub psi: DMatrix<f64>,
}

impl ReducedSlice {
    pub fn view(&self) -> RhoRef<'_> {
        RhoRef {
            layout: &self.layout,
            values: &self.rho,
        }
    }

    /// Per-observation moment integrand `psi + rho` for one component.
    pub fn integrand(&self, v: TargetVariable, m: Moment) -> Result<Vec<f64>> {
        let k = self
            .layout
            .index(v, m)
            .ok_or_else(|| Error::MissingNuisance(format!("{m:?} of {v}")))?;
        Ok(self.psi.column(k).iter().map(|p| p + self.rho[k]).collect())
    }
}

/// Estimates over an outcome grid.
#[derive(Debug, Clone)]
pub struct ReducedForm {
    pub slices: Vec<ReducedSlice>,
    pub trimmed: usize,
}

impl ReducedForm {
    pub fn n(&self) -> usize {
        self.slices.first().map(|s| s.psi.nrows()).unwrap_or(0)
    }

    pub fn u_grid(&self) -> Vec<f64> {
        self.slices.iter().filter_map(|s| s.threshold).collect()
    }
}

/// Reduced form for one outcome column and the requested variables.
pub fn reduced_form_slice(
    y_u: &[f64],
    d: &[f64],
    z: &[f64],
    layout: Arc<Layout>,
    nuisance: &NuisanceSet,
    threshold: Option<f64>,
) -> Result<ReducedSlice> {
    let n = y_u.len();
    if d.len() != n || z.len() != n || nuisance.propensity.values.len() != n {
        return Err(Error::Dimension("reduced form inputs are misaligned".into()));
    }
    let mut rho = Vec::with_capacity(layout.dim());
    let mut psi = DMatrix::zeros(n, layout.dim());
    for (k, v) in layout.variables.iter().enumerate() {
        let values = v.values(y_u, d);
        for z0 in 0..2u8 {
            let g = nuisance.cell(*v, z0)?;
            if g.len() != n {
                return Err(Error::Dimension(format!("nuisance g_{v}(z={z0}) has {} rows", g.len())));
            }
            let (a, col) = estimate_alpha(&values, z, z0, g, &nuisance.propensity);
            rho.push(a);
            psi.column_mut(3 * k + z0 as usize).copy_from_slice(&col);
        }
        let (gm, col) = estimate_gamma(&values);
        rho.push(gm);
        psi.column_mut(3 * k + 2).copy_from_slice(&col);
    }
    Ok(ReducedSlice {
        threshold,
        layout,
        rho,
        psi,
    })
}

/// Stacks reduced forms over a threshold grid (`Y_u = 1(Y <= u)`), or a
/// single level-outcome slice when `u_grid` is `None`. `nuisances` holds one
/// set per slice.
pub fn reduced_form_all(
    y: &[f64],
    d: &[f64],
    z: &[f64],
    u_grid: Option<&[f64]>,
    layout: Arc<Layout>,
    nuisances: &[NuisanceSet],
) -> Result<ReducedForm> {
    let slices: Vec<ReducedSlice> = match u_grid {
        None => {
            let nu = nuisances
                .first()
                .ok_or_else(|| Error::MissingNuisance("level outcome".into()))?;
            vec![reduced_form_slice(y, d, z, layout, nu, None)?]
        }
        Some(grid) => {
            if nuisances.len() != grid.len() {
                return Err(Error::MissingNuisance(format!(
                    "{} nuisance sets for {} thresholds",
                    nuisances.len(),
                    grid.len()
                )));
            }
            grid.iter()
                .zip(nuisances)
                .map(|(&u, nu)| {
                    let y_u: Vec<f64> = y.iter().map(|&v| if v <= u { 1.0 } else { 0.0 }).collect();
                    reduced_form_slice(&y_u, d, z, layout.clone(), nu, Some(u))
                })
                .collect::<Result<_>>()?
        }
    };
    let trimmed = nuisances.first().map(|n| n.propensity.trimmed).unwrap_or(0);
    Ok(ReducedForm { slices, trimmed })
}
