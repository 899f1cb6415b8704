//! Building a control dictionary from a handful of raw covariates: powers,
//! category indicators, a quadratic spline, pairwise interactions, then
//! collinearity pruning and the instrument-interacted design.

use hdte::data::RawData;
use hdte::dictionary::{
    build_z_design, expand, prune_collinear, DictionarySpec, Interaction, TermSpec, Transform, DEFAULT_COLLINEAR_TOL,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hdte::Result<()> {
    let n = 300;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let age: Vec<f64> = (0..n).map(|_| rng.random_range(25.0..64.0f64).floor()).collect();
    let income: Vec<f64> = (0..n).map(|_| rng.random_range(5.0..120.0)).collect();
    let educ: Vec<f64> = (0..n).map(|_| rng.random_range(8..19) as f64).collect();
    let x = DMatrix::from_fn(n, 3, |i, j| [age[i], income[i], educ[i]][j]);
    let z: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
    let d = z.clone();
    let y: Vec<f64> = income.iter().map(|v| 0.3 * v + rng.random_range(-5.0..5.0)).collect();
    let data = RawData::new(y, d, z.clone(), x, vec!["age".into(), "income".into(), "educ".into()])?;

    let term = |column: &str, transforms: Vec<Transform>| TermSpec {
        column: column.into(),
        transforms,
        group: None,
    };
    let spec = DictionarySpec {
        intercept: true,
        terms: vec![
            term("age", vec![Transform::Identity, Transform::Power { degree: 2 }]),
            term("income", vec![Transform::QuadraticSpline { breaks: vec![30.0, 60.0, 90.0] }]),
            term("educ", vec![Transform::Indicators { cuts: vec![12.0, 16.0] }]),
        ],
        interactions: vec![Interaction::Pairwise {
            groups: vec!["age".into(), "income".into(), "educ".into()],
            name: None,
        }],
        standardize: false,
    };
    println!("{}", serde_json::to_string_pretty(&spec).unwrap());

    let full = expand(&data, &spec)?;
    println!("expanded: {} columns", full.ncols());
    let (pruned, report) = prune_collinear(&full, DEFAULT_COLLINEAR_TOL)?;
    println!("after pruning: {} columns, dropped {}", pruned.ncols(), report.dropped.len());
    for j in report.dropped.iter().take(5) {
        println!("  dropped {}", full.labels[*j]);
    }
    let zd = build_z_design(&pruned, &z)?;
    println!("instrument-interacted design: {} columns", zd.ncols());
    println!("first columns: {:?}", &zd.labels[..4.min(zd.ncols())]);
    Ok(())
}
