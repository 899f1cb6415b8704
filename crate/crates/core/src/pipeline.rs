//! End-to-end estimation: nuisance fits, reduced forms, structural
//! functionals, standard errors and bands.
//!
//! Regressions `g_V(z, x)` are fitted separately on the rows with `Z = z`,
//! with a logistic link for 0/1 responses and a linear link otherwise. The
//! instrument propensity is an l1-logistic fit on all rows. Distribution
//! outcomes use `d_u = 1` in the penalty, the level outcome `d_u = 0`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_effects, se_analytic, uniform_band_with_se, se_iqr, Bands, BootstrapConfig};
use crate::data::RawData;
use crate::effects::{
    curve_values, invert_at, late, late_t, outcome_grid, CurveKind, Estimand, PointFlag, QuantileGrid,
    DEFAULT_DENOM_TOL,
};
use crate::error::{Error, Result};
use crate::lasso::{fit_with_iterated_loadings, fit_with_iterated_loadings_logistic, Link, PenaltyConfig, PenalizedFit};
use crate::reduced_form::{
    reduced_form_all, Layout, Moment, NuisanceSet, Propensity, Provenance, ReducedForm, RhoRef, TargetVariable,
    DEFAULT_TRIM_EPS,
};

/// A regression cell declared identically equal to a constant, for every
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownCell {
    pub variable: TargetVariable,
    pub z: u8,
    pub value: f64,
}

/// Percentile range of the threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutcomeGridConfig {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for OutcomeGridConfig {
    fn default() -> Self {
        Self {
            lo: 0.05,
            hi: 0.95,
            step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub estimands: Vec<Estimand>,
    pub penalty: PenaltyConfig,
    pub bootstrap: BootstrapConfig,
    pub u_grid: OutcomeGridConfig,
    pub taus: QuantileGrid,
    /// `Z = 0` implies `D = 0`: the treated cells at `z = 0` are known.
    pub one_sided: bool,
    pub known_cells: Vec<KnownCell>,
    pub trim_eps: f64,
    pub denom_tol: f64,
    /// Keep the bootstrap draws in the results.
    pub keep_draws: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            estimands: vec![Estimand::Late],
            penalty: PenaltyConfig::default(),
            bootstrap: BootstrapConfig::default(),
            u_grid: OutcomeGridConfig::default(),
            taus: QuantileGrid::default(),
            one_sided: false,
            known_cells: Vec::new(),
            trim_eps: DEFAULT_TRIM_EPS,
            denom_tol: DEFAULT_DENOM_TOL,
            keep_draws: false,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.estimands.is_empty() {
            return Err(Error::Config("no estimands requested".into()));
        }
        self.penalty.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.taus.validate().map_err(|e| Error::Config(e.to_string()))?;
        let g = &self.u_grid;
        if !(0.0 <= g.lo && g.lo < g.hi && g.hi <= 1.0 && g.step > 0.0) {
            return Err(Error::Config("threshold grid needs 0 <= lo < hi <= 1 and step > 0".into()));
        }
        if self.bootstrap.replications < 4 {
            return Err(Error::Config("bootstrap needs at least four replications".into()));
        }
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return Err(Error::Config("band level must lie in (0, 1)".into()));
        }
        if self.known_cells.iter().any(|k| k.z > 1 || !k.value.is_finite()) {
            return Err(Error::Config("known cells need z in {0, 1} and a finite value".into()));
        }
        Ok(())
    }

    fn declared(&self) -> Vec<KnownCell> {
        let mut cells = self.known_cells.clone();
        if self.one_sided {
            for (variable, value) in [
                (TargetVariable::ArmIndicator(1), 0.0),
                (TargetVariable::ArmOutcome(1), 0.0),
                (TargetVariable::ArmIndicator(0), 1.0),
            ] {
                if !cells.iter().any(|k| k.variable == variable && k.z == 0) {
                    cells.push(KnownCell { variable, z: 0, value });
                }
            }
        }
        cells
    }
}

/// Summary of one nuisance fit for the run manifest.
#[derive(Debug, Clone, Serialize)]
pub struct FitRecord {
    pub target: String,
    /// Instrument value of the fitting subsample; `None` for full-sample fits.
    pub z: Option<u8>,
    pub threshold: Option<f64>,
    pub link: Link,
    pub rows: usize,
    pub lambda: f64,
    pub support: Vec<usize>,
    pub iterations_used: usize,
    pub kkt_residual: f64,
    pub separation_flag: bool,
    pub refit_dropped: Vec<usize>,
    pub lasso_residual_loadings: bool,
    /// Other (target, z, threshold) triples that reused this fit because
    /// their response coincided on the subsample.
    pub shared_with: usize,
}

/// One estimated functional over its index grid.
#[derive(Debug, Clone, Serialize)]
pub struct EffectResult {
    pub estimand: Estimand,
    pub arm: Option<u8>,
    /// Thresholds `u` or quantile levels `tau`; `None` for scalars.
    pub grid: Option<Vec<f64>>,
    pub estimates: Vec<f64>,
    pub flags: Vec<PointFlag>,
    pub se_analytic: Option<Vec<f64>>,
    /// IQR-rescaled bootstrap standard error; NaN where undefined.
    pub se_bootstrap: Vec<f64>,
    pub bands: Option<Bands>,
    pub replications_used: usize,
    pub flagged_fraction: f64,
    pub warning: bool,
    /// Unflagged bootstrap draws at the finite points, when requested.
    #[serde(skip)]
    pub draws: Option<Vec<Vec<f64>>>,
    /// Grid positions the draw columns refer to.
    #[serde(skip)]
    pub draw_points: Vec<usize>,
}

impl EffectResult {
    pub fn label(&self) -> String {
        match self.arm {
            Some(a) => format!("{}_d{a}", self.estimand.name()),
            None => self.estimand.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimandFailure {
    pub estimand: Estimand,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Estimation {
    pub results: Vec<EffectResult>,
    pub failures: Vec<EstimandFailure>,
    pub fits: Vec<FitRecord>,
    pub exogenous: bool,
    pub u_grid: Vec<f64>,
    pub trimmed_level: Option<usize>,
    pub trimmed_distribution: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Sample {
    Full,
    Z(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct JobKey {
    sample: Sample,
    d_u: u32,
    response: Vec<u64>,
}

struct Job {
    key: JobKey,
    label: String,
    z: Option<u8>,
    threshold: Option<f64>,
    uses: usize,
}

fn is_binary(v: &[f64]) -> bool {
    v.iter().all(|&t| t == 0.0 || t == 1.0)
}

/// Penalized fit of `v` on the rows of `f` selected by `mask`, with the
/// link chosen by the response type; returns predictions on every row.
pub fn fit_nuisance(f: &DMatrix<f64>, v: &[f64], mask: Option<&[bool]>, cfg: &PenaltyConfig) -> Result<(Vec<f64>, PenalizedFit)> {
    let (fs, vs) = match mask {
        None => (f.clone(), v.to_vec()),
        Some(m) => {
            let rows: Vec<usize> = (0..f.nrows()).filter(|&i| m[i]).collect();
            (f.select_rows(rows.iter()), rows.iter().map(|&i| v[i]).collect())
        }
    };
    if vs.is_empty() {
        return Err(Error::Degenerate("empty fitting subsample".into()));
    }
    let fit = if is_binary(&vs) {
        fit_with_iterated_loadings_logistic(&fs, &vs, cfg)?
    } else {
        fit_with_iterated_loadings(&fs, &vs, cfg)?
    };
    let pred = fit.predict(f).iter().copied().collect();
    Ok((pred, fit))
}

struct Planner<'a> {
    f: &'a DMatrix<f64>,
    z: &'a [f64],
    jobs: Vec<Job>,
    index: BTreeMap<JobKey, usize>,
}

/// How a `(V, z)` cell for one slice is produced.
enum CellPlan {
    Known(f64),
    Job(usize),
}

impl<'a> Planner<'a> {
    fn new(f: &'a DMatrix<f64>, z: &'a [f64]) -> Self {
        Self {
            f,
            z,
            jobs: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    fn plan(&mut self, label: String, values: &[f64], z0: Option<u8>, d_u: u32, threshold: Option<f64>) -> CellPlan {
        let rows: Vec<usize> = match z0 {
            Some(zz) => (0..values.len()).filter(|&i| self.z[i] == zz as f64).collect(),
            None => (0..values.len()).collect(),
        };
        if let Some(&first) = rows.first() {
            let c = values[first];
            if rows.iter().all(|&i| values[i] == c) {
                return CellPlan::Known(c);
            }
        }
        let key = JobKey {
            sample: z0.map(Sample::Z).unwrap_or(Sample::Full),
            d_u,
            response: rows.iter().map(|&i| values[i].to_bits()).collect(),
        };
        if let Some(&k) = self.index.get(&key) {
            self.jobs[k].uses += 1;
            return CellPlan::Job(k);
        }
        let k = self.jobs.len();
        self.index.insert(key.clone(), k);
        self.jobs.push(Job {
            key,
            label,
            z: z0,
            threshold,
            uses: 1,
        });
        CellPlan::Job(k)
    }

    fn run(&self, base: &PenaltyConfig) -> Result<Vec<(Vec<f64>, FitRecord)>> {
        let n = self.f.nrows();
        let p = self.f.ncols();
        self.jobs
            .par_iter()
            .map(|job| {
                let mut cfg = base.clone();
                cfg.d_u = job.key.d_u;
                cfg.reference_n = Some(n);
                let mask: Option<Vec<bool>> = job.z.map(|zz| self.z.iter().map(|&v| v == zz as f64).collect());
                if job.z.is_some() && cfg.penalty_dim.is_none() {
                    cfg.penalty_dim = Some(2 * p);
                }
                let response: Vec<f64> = match job.z {
                    None => job.key.response.iter().map(|b| f64::from_bits(*b)).collect(),
                    Some(_) => {
                        let m = mask.as_ref().unwrap();
                        let mut it = job.key.response.iter();
                        (0..n)
                            .map(|i| if m[i] { f64::from_bits(*it.next().unwrap()) } else { 0.0 })
                            .collect()
                    }
                };
                let (pred, fit) = fit_nuisance(self.f, &response, mask.as_deref(), &cfg)
                    .map_err(|e| annotate(e, &job.label, job.z, job.threshold))?;
                let rows = mask.as_ref().map(|m| m.iter().filter(|b| **b).count()).unwrap_or(n);
                Ok((
                    pred,
                    FitRecord {
                        target: job.label.clone(),
                        z: job.z,
                        threshold: job.threshold,
                        link: fit.link,
                        rows,
                        lambda: fit.lambda,
                        support: fit.support.clone(),
                        iterations_used: fit.iterations_used,
                        kkt_residual: fit.kkt_residual,
                        separation_flag: fit.separation_flag,
                        refit_dropped: fit.refit_dropped.clone(),
                        lasso_residual_loadings: fit.lasso_residual_loadings,
                        shared_with: job.uses - 1,
                    },
                ))
            })
            .collect()
    }
}

fn annotate(e: Error, label: &str, z: Option<u8>, threshold: Option<f64>) -> Error {
    let at = match (z, threshold) {
        (Some(z), Some(u)) => format!("{label} on z={z}, u={u}"),
        (Some(z), None) => format!("{label} on z={z}"),
        (None, _) => label.to_string(),
    };
    match e {
        Error::NoConvergence { .. } | Error::Unbounded(_) | Error::Degenerate(_) | Error::PenaltyDomain(_) => {
            Error::Degenerate(format!("nuisance fit {at}: {e}"))
        }
        other => other,
    }
}

/// Nuisances and reduced form for one family of slices.
struct Family {
    reduced: ReducedForm,
}

fn build_family(
    data: &RawData,
    f: &DMatrix<f64>,
    cfg: &EstimationConfig,
    layout: Arc<Layout>,
    u_grid: Option<&[f64]>,
    fits: &mut Vec<FitRecord>,
) -> Result<Family> {
    let d_u = if u_grid.is_some() { 1 } else { 0 };
    let known = cfg.declared();
    let mut planner = Planner::new(f, &data.z);
    let prop_plan = planner.plan("Z".into(), &data.z, None, d_u, None);

    let outcomes: Vec<(Option<f64>, Vec<f64>)> = match u_grid {
        None => vec![(None, data.y.clone())],
        Some(g) => g
            .iter()
            .map(|&u| (Some(u), data.y.iter().map(|&v| if v <= u { 1.0 } else { 0.0 }).collect()))
            .collect(),
    };
    let mut plans: Vec<Vec<(TargetVariable, u8, CellPlan)>> = Vec::with_capacity(outcomes.len());
    for (u, y_u) in &outcomes {
        let mut slice = Vec::new();
        for &v in &layout.variables {
            let values = v.values(y_u, &data.d);
            for z0 in 0..2u8 {
                let plan = match known.iter().find(|k| k.variable == v && k.z == z0) {
                    Some(k) => CellPlan::Known(k.value),
                    None => {
                        let thr = if v.is_indicator_of_treatment() { None } else { *u };
                        planner.plan(v.to_string(), &values, Some(z0), d_u, thr)
                    }
                };
                slice.push((v, z0, plan));
            }
        }
        plans.push(slice);
    }

    let results = planner.run(&cfg.penalty)?;
    fits.extend(results.iter().map(|(_, r)| r.clone()));
    let raw_prop = match prop_plan {
        CellPlan::Known(c) => {
            return Err(Error::Degenerate(format!("instrument is constant ({c}); propensity undefined")));
        }
        CellPlan::Job(k) => &results[k].0,
    };
    let propensity = Arc::new(Propensity::new(raw_prop, cfg.trim_eps)?);
    let nuisances: Vec<NuisanceSet> = plans
        .into_iter()
        .map(|slice| {
            let mut set = NuisanceSet::new(propensity.clone());
            for (v, z0, plan) in slice {
                match plan {
                    CellPlan::Known(c) => set.insert_known(v, z0, c),
                    CellPlan::Job(k) => set.insert(v, z0, results[k].0.clone(), Provenance::Fit(k)),
                }
            }
            set
        })
        .collect();
    let reduced = reduced_form_all(&data.y, &data.d, &data.z, u_grid, layout, &nuisances)?;
    Ok(Family { reduced })
}

fn curve_kind(e: Estimand) -> CurveKind {
    if e.on_treated() {
        CurveKind::LocalTreated
    } else {
        CurveKind::Local
    }
}

/// Values of a distribution estimand (one arm or a contrast) for a set of
/// reduced-form vectors.
fn curve_functional(e: Estimand, arm: Option<u8>, views: &[RhoRef<'_>], u: &[f64], taus: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<PointFlag>)> {
    let kind = curve_kind(e);
    match e {
        Estimand::Lasf | Estimand::LasfT => {
            let v = curve_values(views, arm.unwrap_or(1), kind, tol)?;
            let n = v.len();
            Ok((v, vec![PointFlag::Ok; n]))
        }
        Estimand::Ldte | Estimand::LdteT => {
            let a = curve_values(views, 1, kind, tol)?;
            let b = curve_values(views, 0, kind, tol)?;
            let n = a.len();
            Ok((a.iter().zip(&b).map(|(x, y)| x - y).collect(), vec![PointFlag::Ok; n]))
        }
        _ => {
            if u.len() < 2 {
                return Err(Error::InvalidInput("quantile inversion needs at least two thresholds".into()));
            }
            let a = curve_values(views, 1, kind, tol)?;
            let b = curve_values(views, 0, kind, tol)?;
            let mut vals = Vec::with_capacity(taus.len());
            let mut flags = Vec::with_capacity(taus.len());
            for &t in taus {
                let (q1, f1) = invert_at(u, &a, t);
                let (q0, f0) = invert_at(u, &b, t);
                vals.push(q1 - q0);
                flags.push(f1.max(f0));
            }
            Ok((vals, flags))
        }
    }
}

fn scalar_functional(e: Estimand, rho: &RhoRef<'_>, tol: f64) -> Result<f64> {
    match e {
        Estimand::Late | Estimand::Ate => late(rho, tol),
        _ => late_t(rho, tol),
    }
}

/// Bootstraps `functional` over the reduced form and assembles standard
/// errors and bands for the points flagged `valid`.
fn with_inference<F>(
    estimand: Estimand,
    arm: Option<u8>,
    grid: Option<Vec<f64>>,
    estimates: Vec<f64>,
    flags: Vec<PointFlag>,
    se_analytic_values: Option<Vec<f64>>,
    reduced: &ReducedForm,
    functional: F,
    cfg: &BootstrapConfig,
    keep_draws: bool,
) -> Result<EffectResult>
where
    F: Fn(&[RhoRef<'_>]) -> Result<Vec<f64>> + Sync,
{
    let valid: Vec<usize> = (0..estimates.len()).filter(|&j| estimates[j].is_finite()).collect();
    if valid.is_empty() {
        return Err(Error::Degenerate(format!("{estimand}: no finite point estimates")));
    }
    let boot = bootstrap_effects(
        reduced,
        |views| {
            let all = functional(views)?;
            Ok(valid.iter().map(|&j| all[j]).collect())
        },
        cfg,
    )?;
    let rows = boot.rows();
    let q = estimates.len();
    let mut se = vec![f64::NAN; q];
    let mut bands = None;
    if rows.len() >= 4 {
        let est_v: Vec<f64> = valid.iter().map(|&j| estimates[j]).collect();
        let se_v: Vec<f64> = (0..valid.len())
            .map(|k| se_iqr(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        for (k, &j) in valid.iter().enumerate() {
            se[j] = se_v[k];
        }
        if let Ok(b) = uniform_band_with_se(&est_v, &rows, &se_v, cfg.level) {
            bands = Some(expand_bands(b, &valid, q));
        }
    }
    Ok(EffectResult {
        estimand,
        arm,
        grid,
        estimates,
        flags,
        se_analytic: se_analytic_values,
        se_bootstrap: se,
        bands,
        replications_used: rows.len(),
        flagged_fraction: boot.flagged_fraction(),
        warning: boot.warning(),
        draws: keep_draws.then_some(rows),
        draw_points: valid,
    })
}

fn expand_bands(b: Bands, valid: &[usize], q: usize) -> Bands {
    let spread = |v: &[f64], fill: f64| {
        let mut out = vec![fill; q];
        for (k, &j) in valid.iter().enumerate() {
            out[j] = v[k];
        }
        out
    };
    let mut excluded = vec![true; q];
    for (k, &j) in valid.iter().enumerate() {
        excluded[j] = b.excluded[k];
    }
    Bands {
        estimates: spread(&b.estimates, f64::NAN),
        se: spread(&b.se, f64::NAN),
        cv_uniform: b.cv_uniform,
        cv_pointwise_bootstrap: spread(&b.cv_pointwise_bootstrap, f64::NAN),
        cv_normal: b.cv_normal,
        excluded,
        uniform_lower: spread(&b.uniform_lower, f64::NAN),
        uniform_upper: spread(&b.uniform_upper, f64::NAN),
        pointwise_lower: spread(&b.pointwise_lower, f64::NAN),
        pointwise_upper: spread(&b.pointwise_upper, f64::NAN),
    }
}

fn scalar_result(e: Estimand, reduced: &ReducedForm, cfg: &EstimationConfig) -> Result<EffectResult> {
    let slice = &reduced.slices[0];
    let est = scalar_functional(e, &slice.view(), cfg.denom_tol)?;
    let analytic = match e {
        Estimand::Late | Estimand::Ate => {
            let p1 = slice.integrand(TargetVariable::Outcome, Moment::Alpha(1))?;
            let p0 = slice.integrand(TargetVariable::Outcome, Moment::Alpha(0))?;
            let rho = slice.view();
            let den = rho.alpha(TargetVariable::ArmIndicator(1), 1)? - rho.alpha(TargetVariable::ArmIndicator(1), 0)?;
            let contrast: Vec<f64> = p1.iter().zip(&p0).map(|(a, b)| a - b).collect();
            Some(vec![se_analytic(&contrast, den)?])
        }
        _ => None,
    };
    let tol = cfg.denom_tol;
    with_inference(
        e,
        None,
        None,
        vec![est],
        vec![PointFlag::Ok],
        analytic,
        reduced,
        |views| Ok(vec![scalar_functional(e, &views[0], tol)?]),
        &cfg.bootstrap,
        cfg.keep_draws,
    )
}

fn curve_results(e: Estimand, reduced: &ReducedForm, cfg: &EstimationConfig) -> Result<Vec<EffectResult>> {
    let u = reduced.u_grid();
    let taus = &cfg.taus.0;
    let tol = cfg.denom_tol;
    let arms: Vec<Option<u8>> = match e {
        Estimand::Lasf | Estimand::LasfT => vec![Some(0), Some(1)],
        _ => vec![None],
    };
    let grid = match e {
        Estimand::Lasf | Estimand::LasfT | Estimand::Ldte | Estimand::LdteT => u.clone(),
        _ => taus.clone(),
    };
    let point_views: Vec<RhoRef<'_>> = reduced.slices.iter().map(|s| s.view()).collect();
    arms.into_iter()
        .map(|arm| {
            let (est, flags) = curve_functional(e, arm, &point_views, &u, taus, tol)?;
            with_inference(
                e,
                arm,
                Some(grid.clone()),
                est,
                flags,
                None,
                reduced,
                |views| Ok(curve_functional(e, arm, views, &u, taus, tol)?.0),
                &cfg.bootstrap,
                cfg.keep_draws,
            )
        })
        .collect()
}

/// Runs the full estimation for every requested estimand. Failures of
/// individual estimands are collected rather than returned.
pub fn estimate(data: &RawData, f: &DMatrix<f64>, cfg: &EstimationConfig) -> Result<Estimation> {
    cfg.validate()?;
    if f.nrows() != data.n() {
        return Err(Error::Dimension(format!("design has {} rows, data {}", f.nrows(), data.n())));
    }
    let exogenous = data.d == data.z;
    let mut failures = Vec::new();
    let mut estimands: Vec<Estimand> = Vec::new();
    for &e in &cfg.estimands {
        if estimands.contains(&e) {
            continue;
        }
        if e.requires_exogenous() && !exogenous {
            failures.push(EstimandFailure {
                estimand: e,
                message: format!("{e} needs the treatment to be its own instrument"),
            });
        } else {
            estimands.push(e);
        }
    }
    let want_level = estimands.iter().any(|e| e.is_scalar());
    let want_curve = estimands.iter().any(|e| !e.is_scalar());
    let mut fits = Vec::new();
    let mut results = Vec::new();

    let mut trimmed_level = None;
    if want_level {
        match build_family(data, f, cfg, Arc::new(Layout::full()), None, &mut fits) {
            Ok(fam) => {
                trimmed_level = Some(fam.reduced.trimmed);
                for &e in estimands.iter().filter(|e| e.is_scalar()) {
                    match scalar_result(e, &fam.reduced, cfg) {
                        Ok(r) => results.push(r),
                        Err(err) => failures.push(EstimandFailure {
                            estimand: e,
                            message: err.to_string(),
                        }),
                    }
                }
            }
            Err(err) => {
                for &e in estimands.iter().filter(|e| e.is_scalar()) {
                    failures.push(EstimandFailure {
                        estimand: e,
                        message: err.to_string(),
                    });
                }
            }
        }
    }

    let mut u_grid = Vec::new();
    let mut trimmed_distribution = None;
    if want_curve {
        u_grid = outcome_grid(&data.y, cfg.u_grid.lo, cfg.u_grid.hi, cfg.u_grid.step);
        let layout = Arc::new(Layout::new(vec![
            TargetVariable::ArmOutcome(0),
            TargetVariable::ArmIndicator(0),
            TargetVariable::ArmOutcome(1),
            TargetVariable::ArmIndicator(1),
        ]));
        match build_family(data, f, cfg, layout, Some(&u_grid), &mut fits) {
            Ok(fam) => {
                trimmed_distribution = Some(fam.reduced.trimmed);
                for &e in estimands.iter().filter(|e| !e.is_scalar()) {
                    match curve_results(e, &fam.reduced, cfg) {
                        Ok(r) => results.extend(r),
                        Err(err) => failures.push(EstimandFailure {
                            estimand: e,
                            message: err.to_string(),
                        }),
                    }
                }
            }
            Err(err) => {
                for &e in estimands.iter().filter(|e| !e.is_scalar()) {
                    failures.push(EstimandFailure {
                        estimand: e,
                        message: err.to_string(),
                    });
                }
            }
        }
    }
    Ok(Estimation {
        results,
        failures,
        fits,
        exogenous,
        u_grid,
        trimmed_level,
        trimmed_distribution,
    })
}
