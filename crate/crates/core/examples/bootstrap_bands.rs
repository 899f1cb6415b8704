//! Multiplier bootstrap on its own: draws for a vector of means, IQR
//! standard errors under each multiplier law, and sup-t uniform bands.

use hdte::bootstrap::{bootstrap_reduced_form, se_iqr, uniform_band, MultiplierKind};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn main() -> hdte::Result<()> {
    let (n, q) = (250, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let exp = Exp::new(1.0).unwrap();
    // q correlated skewed series sharing a common component
    let v = DMatrix::from_fn(n, q, |_, _| exp.sample(&mut rng));
    let common: Vec<f64> = (0..n).map(|_| exp.sample(&mut rng)).collect();
    let v = DMatrix::from_fn(n, q, |i, j| v[(i, j)] + common[i]);
    let means: Vec<f64> = v.column_iter().map(|c| c.mean()).collect();
    let psi = DMatrix::from_fn(n, q, |i, j| v[(i, j)] - means[j]);
    let sd0 = (psi.column(0).norm_squared() / (n - 1) as f64).sqrt() / (n as f64).sqrt();

    for kind in [MultiplierKind::Gaussian, MultiplierKind::Bayesian, MultiplierKind::Wild] {
        let boot = bootstrap_reduced_form(&means, &psi, 2000, kind, 42)?;
        println!("{kind:?}: IQR se of first mean {:.4} (sd/sqrt(n) {:.4})", se_iqr(&boot.column(0))?, sd0);
    }

    let boot = bootstrap_reduced_form(&means, &psi, 2000, MultiplierKind::Gaussian, 42)?;
    let bands = uniform_band(&means, &boot.rows(), 0.95)?;
    println!("uniform cv {:.3} vs normal {:.3}", bands.cv_uniform, bands.cv_normal);
    for j in 0..q {
        println!(
            "  {j:2}: {:.3}  pointwise [{:.3}, {:.3}]  uniform [{:.3}, {:.3}]",
            means[j], bands.pointwise_lower[j], bands.pointwise_upper[j], bands.uniform_lower[j], bands.uniform_upper[j]
        );
    }
    Ok(())
}
