//! Control dictionaries: transforms of raw covariates, group interactions,
//! collinearity pruning and the instrument-interacted design.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::RawData;
use crate::error::{Error, Result};

/// Default relative tolerance for [`prune_collinear`].
pub const DEFAULT_COLLINEAR_TOL: f64 = 1e-9;

/// A transform applied to one raw covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Power { degree: u32 },
    /// One indicator per category formed by the cut points.
    Indicators { cuts: Vec<f64> },
    /// `x`, `x^2`, and both of them interacted with one dummy per regime
    /// formed by the break points.
    QuadraticSpline { breaks: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub column: String,
    pub transforms: Vec<Transform>,
    /// Group name used by interaction directives; defaults to the column name.
    #[serde(default)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interaction {
    /// Products between every pair of distinct groups in the list.
    Pairwise {
        groups: Vec<String>,
        #[serde(default)]
        name: Option<String>,
    },
    /// Products of every column in the `left` groups with every column in
    /// the `right` groups.
    Cross {
        left: Vec<String>,
        right: Vec<String>,
        #[serde(default)]
        name: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionarySpec {
    /// Prepend a constant column.
    #[serde(default)]
    pub intercept: bool,
    pub terms: Vec<TermSpec>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    /// Rescale every column to unit root-mean-square. Off by default: the
    /// penalty loadings already account for column scale.
    #[serde(default)]
    pub standardize: bool,
}

impl DictionarySpec {
    /// Every raw column passed through unchanged.
    pub fn identity(columns: &[String]) -> Self {
        Self {
            intercept: false,
            terms: columns
                .iter()
                .map(|c| TermSpec {
                    column: c.clone(),
                    transforms: vec![Transform::Identity],
                    group: None,
                })
                .collect(),
            interactions: Vec::new(),
            standardize: false,
        }
    }

    fn validate(&self) -> Result<()> {
        for t in &self.terms {
            for tr in &t.transforms {
                match tr {
                    Transform::Power { degree } if *degree < 1 => {
                        return Err(Error::InvalidInput(format!("power degree must be >= 1 for `{}`", t.column)))
                    }
                    Transform::QuadraticSpline { breaks: pts } | Transform::Indicators { cuts: pts } => {
                        if pts.is_empty() || pts.windows(2).any(|w| w[0] >= w[1]) || pts.iter().any(|v| !v.is_finite()) {
                            return Err(Error::InvalidInput(format!(
                                "cut/break points for `{}` must be non-empty, finite and strictly increasing",
                                t.column
                            )));
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

/// The expanded dictionary `f(X)`, one labelled column per term.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl DesignMatrix {
    pub fn new(values: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if values.ncols() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} columns",
                labels.len(),
                values.ncols()
            )));
        }
        Ok(Self { values, labels })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Rows selected by `mask`, in order.
    pub fn select_rows(&self, mask: &[bool]) -> DMatrix<f64> {
        let rows: Vec<usize> = (0..self.nrows()).filter(|&i| mask[i]).collect();
        self.values.select_rows(rows.iter())
    }
}

/// Index of the regime containing `x`: the number of points `<= x`.
fn regime(points: &[f64], x: f64) -> usize {
    points.partition_point(|&b| b <= x)
}

fn regime_label(col: &str, points: &[f64], r: usize) -> String {
    match (r.checked_sub(1).map(|i| points[i]), points.get(r)) {
        (None, Some(hi)) => format!("1[{col}<{hi}]"),
        (Some(lo), Some(hi)) => format!("1[{lo}<={col}<{hi}]"),
        (Some(lo), None) => format!("1[{col}>={lo}]"),
        (None, None) => unreachable!("regime of empty point set"),
    }
}

struct Builder {
    n: usize,
    columns: Vec<Vec<f64>>,
    labels: Vec<String>,
    groups: BTreeMap<String, Vec<usize>>,
    group_order: Vec<String>,
}

impl Builder {
    fn push(&mut self, group: &str, label: String, values: Vec<f64>) -> Result<()> {
        if let Some(row) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { column: label, row });
        }
        let idx = self.columns.len();
        self.columns.push(values);
        self.labels.push(label);
        if !self.groups.contains_key(group) {
            self.group_order.push(group.to_string());
        }
        self.groups.entry(group.to_string()).or_default().push(idx);
        Ok(())
    }

    fn group(&self, name: &str) -> Result<Vec<usize>> {
        self.groups
            .get(name)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("unknown term group `{name}`")))
    }

    fn product(&mut self, group: &str, a: usize, b: usize) -> Result<()> {
        let vals: Vec<f64> = (0..self.n).map(|i| self.columns[a][i] * self.columns[b][i]).collect();
        let label = format!("{}*{}", self.labels[a], self.labels[b]);
        self.push(group, label, vals)
    }
}

/// Builds `f(X)` from raw covariates. Columns appear in spec order; each
/// interaction directive then appends its products in group-pair order.
pub fn expand(raw: &RawData, spec: &DictionarySpec) -> Result<DesignMatrix> {
    spec.validate()?;
    let n = raw.n();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two observations".into()));
    }
    let mut b = Builder {
        n,
        columns: Vec::new(),
        labels: Vec::new(),
        groups: BTreeMap::new(),
        group_order: Vec::new(),
    };
    if spec.intercept {
        b.push("intercept", "1".into(), vec![1.0; n])?;
    }
    for term in &spec.terms {
        let j = raw.column_index(&term.column)?;
        let x: Vec<f64> = raw.x.column(j).iter().copied().collect();
        let col = term.column.as_str();
        let group = term.group.clone().unwrap_or_else(|| term.column.clone());
        for tr in &term.transforms {
            match tr {
                Transform::Identity => b.push(&group, col.to_string(), x.clone())?,
                Transform::Power { degree } => {
                    let k = *degree as i32;
                    b.push(&group, format!("{col}^{k}"), x.iter().map(|v| v.powi(k)).collect())?
                }
                Transform::Indicators { cuts } => {
                    for r in 0..=cuts.len() {
                        let vals = x.iter().map(|&v| if regime(cuts, v) == r { 1.0 } else { 0.0 }).collect();
                        b.push(&group, regime_label(col, cuts, r), vals)?;
                    }
                }
                Transform::QuadraticSpline { breaks } => {
                    b.push(&group, col.to_string(), x.clone())?;
                    b.push(&group, format!("{col}^2"), x.iter().map(|v| v * v).collect())?;
                    for r in 0..=breaks.len() {
                        let dummy = regime_label(col, breaks, r);
                        let lin = x.iter().map(|&v| if regime(breaks, v) == r { v } else { 0.0 }).collect();
                        b.push(&group, format!("{col}*{dummy}"), lin)?;
                        let quad = x.iter().map(|&v| if regime(breaks, v) == r { v * v } else { 0.0 }).collect();
                        b.push(&group, format!("{col}^2*{dummy}"), quad)?;
                    }
                }
            }
        }
    }
    for directive in &spec.interactions {
        match directive {
            Interaction::Pairwise { groups, name } => {
                let cols: Vec<Vec<usize>> = groups.iter().map(|g| b.group(g)).collect::<Result<_>>()?;
                for gi in 0..groups.len() {
                    for gj in gi + 1..groups.len() {
                        let out = name.clone().unwrap_or_else(|| format!("{}*{}", groups[gi], groups[gj]));
                        for &a in &cols[gi] {
                            for &c in &cols[gj] {
                                b.product(&out, a, c)?;
                            }
                        }
                    }
                }
            }
            Interaction::Cross { left, right, name } => {
                let lc: Vec<usize> = left.iter().map(|g| b.group(g)).collect::<Result<Vec<_>>>()?.concat();
                let rc: Vec<usize> = right.iter().map(|g| b.group(g)).collect::<Result<Vec<_>>>()?.concat();
                let out = name.clone().unwrap_or_else(|| format!("{}x{}", left.join("+"), right.join("+")));
                for &a in &lc {
                    for &c in &rc {
                        b.product(&out, a, c)?;
                    }
                }
            }
        }
    }
    let p = b.columns.len();
    let mut values = DMatrix::from_fn(n, p, |i, j| b.columns[j][i]);
    if spec.standardize {
        for mut col in values.column_iter_mut() {
            let rms = (col.norm_squared() / n as f64).sqrt();
            if rms > 0.0 {
                col /= rms;
            }
        }
    }
    DesignMatrix::new(values, b.labels)
}

/// Appends the pairwise products between every pair of distinct column
/// groups. A column is never multiplied by itself.
pub fn interact_groups(m: &DesignMatrix, groups: &[Vec<usize>]) -> Result<DesignMatrix> {
    let p = m.ncols();
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidInput("empty interaction group".into()));
        }
        if let Some(&j) = g.iter().find(|&&j| j >= p) {
            return Err(Error::InvalidInput(format!("group column {j} out of range (p = {p})")));
        }
    }
    let mut pairs = Vec::new();
    for gi in 0..groups.len() {
        for gj in gi + 1..groups.len() {
            for &a in &groups[gi] {
                for &c in &groups[gj] {
                    if a != c {
                        pairs.push((a, c));
                    }
                }
            }
        }
    }
    let n = m.nrows();
    let mut values = m.values.clone().resize_horizontally(p + pairs.len(), 0.0);
    let mut labels = m.labels.clone();
    for (k, &(a, c)) in pairs.iter().enumerate() {
        let prod = m.values.column(a).component_mul(&m.values.column(c));
        if let Some(row) = prod.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                column: format!("{}*{}", m.labels[a], m.labels[c]),
                row,
            });
        }
        values.column_mut(p + k).copy_from(&prod);
        labels.push(format!("{}*{}", m.labels[a], m.labels[c]));
    }
    debug_assert_eq!(values.nrows(), n);
    DesignMatrix::new(values, labels)
}

/// Outcome of [`prune_collinear`].
#[derive(Debug, Clone, PartialEq)]
pub struct PruneReport {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// Set when no column survived (for example an all-zero matrix).
    pub all_dropped: bool,
}

/// Greedy left-to-right scan that drops a column when its residual after
/// projection on the retained columns has norm `<= tol * ||column||`.
pub fn prune_collinear(m: &DesignMatrix, tol: f64) -> Result<(DesignMatrix, PruneReport)> {
    if tol <= 0.0 || !tol.is_finite() {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let kept = independent_columns(&m.values, tol);
    let dropped: Vec<usize> = (0..m.ncols()).filter(|j| !kept.contains(j)).collect();
    let values = m.values.select_columns(kept.iter());
    let labels = kept.iter().map(|&j| m.labels[j].clone()).collect();
    let report = PruneReport {
        all_dropped: kept.is_empty(),
        kept,
        dropped,
    };
    Ok((DesignMatrix::new(values, labels)?, report))
}

/// Indices of the columns kept by the greedy Gram-Schmidt scan.
pub(crate) fn independent_columns(values: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for (j, col) in values.column_iter().enumerate() {
        let norm = col.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r: DVector<f64> = col.into_owned();
        // two passes of modified Gram-Schmidt keep the residual accurate
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn > tol * norm {
            basis.push(r / rn);
            kept.push(j);
        }
    }
    kept
}

/// The instrument-interacted design `((1 - z) f(x)', z f(x)')'`.
pub fn build_z_design(m: &DesignMatrix, z: &[f64]) -> Result<DesignMatrix> {
    let (n, p) = (m.nrows(), m.ncols());
    if z.len() != n {
        return Err(Error::Dimension(format!("z has {} entries, design has {n} rows", z.len())));
    }
    if z.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidInput("z must be binary".into()));
    }
    let values = DMatrix::from_fn(n, 2 * p, |i, j| {
        if j < p {
            (1.0 - z[i]) * m.values[(i, j)]
        } else {
            z[i] * m.values[(i, j - p)]
        }
    });
    let labels = m
        .labels
        .iter()
        .map(|l| format!("(1-z)*{l}"))
        .chain(m.labels.iter().map(|l| format!("z*{l}")))
        .collect();
    DesignMatrix::new(values, labels)
}
