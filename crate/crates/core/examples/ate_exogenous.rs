//! Average and quantile treatment effects when treatment is as good as
//! randomly assigned given many controls (the treatment is its own
//! instrument).

use hdte::dictionary::{expand, DictionarySpec};
use hdte::effects::Estimand;
use hdte::pipeline::{estimate, EstimationConfig};
use hdte::simulation::{coef_scales, covariance_factor, gen_dgp, theta0, toeplitz};

fn main() -> hdte::Result<()> {
    let (n, p) = (500, 40);
    let theta = theta0(p);
    let sigma = toeplitz(p, 0.5);
    let (c_d, c_y) = coef_scales(0.5, 0.5, &theta, &sigma)?;
    let data = gen_dgp(n, &covariance_factor(&sigma)?, &theta, c_d, c_y, 5).into_raw()?;
    let mut spec = DictionarySpec::identity(&data.names);
    spec.intercept = true;
    let design = expand(&data, &spec)?;

    let mut cfg = EstimationConfig {
        estimands: vec![Estimand::Ate, Estimand::AteT, Estimand::Qte],
        ..EstimationConfig::default()
    };
    cfg.bootstrap.replications = 300;
    let est = estimate(&data, &design.values, &cfg)?;
    for r in &est.results {
        match &r.grid {
            None => println!(
                "{}: {:+.4}  analytic se {:.4}  bootstrap se {:.4}",
                r.label(),
                r.estimates[0],
                r.se_analytic.as_ref().map(|s| s[0]).unwrap_or(f64::NAN),
                r.se_bootstrap[0]
            ),
            Some(g) => {
                println!("{} on {} quantiles", r.label(), g.len());
                for j in (0..g.len()).step_by(20) {
                    println!("  tau {:.2}: {:+.4} (se {:.4})", g[j], r.estimates[j], r.se_bootstrap[j]);
                }
            }
        }
    }
    println!("propensity trimming: {:?} level, {:?} distribution", est.trimmed_level, est.trimmed_distribution);
    Ok(())
}
