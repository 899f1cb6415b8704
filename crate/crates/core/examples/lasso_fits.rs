//! Lasso and l1-logistic fits with iterated penalty loadings on a sparse
//! design with heteroscedastic noise.

use hdte::lasso::{fit_with_iterated_loadings, fit_with_iterated_loadings_logistic, PenaltyConfig};
use hdte::stats::logistic;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> hdte::Result<()> {
    let (n, p) = (400, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let f = DMatrix::from_fn(n, p, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let beta = [1.0, -0.8, 0.6, 0.4, -0.3];
    let index: Vec<f64> = (0..n).map(|i| (0..beta.len()).map(|j| beta[j] * f[(i, j)]).sum()).collect();

    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            index[i] + (0.5 + f[(i, 0)].abs()) * e
        })
        .collect();
    let cfg = PenaltyConfig::default();
    let fit = fit_with_iterated_loadings(&f, &y, &cfg)?;
    println!("linear: lambda {:.3}, {} rounds, support {:?}", fit.lambda, fit.iterations_used, fit.support);
    for j in 0..beta.len() {
        println!("  theta_{j}: true {:+.2}  lasso {:+.3}  post {:+.3}", beta[j], fit.theta_lasso[j], fit.theta_post[j]);
    }

    let u = rand_distr::Uniform::new(0.0, 1.0).unwrap();
    let b: Vec<f64> = (0..n)
        .map(|i| f64::from(u.sample(&mut rng) < logistic(index[i])))
        .collect();
    let lf = fit_with_iterated_loadings_logistic(&f, &b, &cfg)?;
    println!(
        "logistic: lambda {:.3}, {} rounds, support {:?}, kkt {:.1e}",
        lf.lambda, lf.iterations_used, lf.support, lf.kkt_residual
    );
    let prob = lf.predict(&f);
    println!("  fitted probabilities in [{:.3}, {:.3}]", prob.min(), prob.max());
    Ok(())
}
