//! Local quantile treatment effects with one-sided compliance: simulated
//! data with a constant effect, uniform and pointwise bands.
//!
//! Usage: `cargo run --release --example lqte_one_sided -- [seed] [n]`

use hdte::dictionary::{expand, DictionarySpec};
use hdte::effects::Estimand;
use hdte::pipeline::{estimate, EstimationConfig};
use hdte::simulation::gen_one_sided_iv;

fn main() -> hdte::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let effect = 0.5;
    let n = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let data = gen_one_sided_iv(n, 10, effect, seed)?;
    let mut spec = DictionarySpec::identity(&data.names);
    spec.intercept = true;
    let design = expand(&data, &spec)?;
    let cfg = EstimationConfig {
        estimands: vec![Estimand::Late, Estimand::Lqte],
        one_sided: true,
        ..EstimationConfig::default()
    };
    let start = std::time::Instant::now();
    let est = estimate(&data, &design.values, &cfg)?;
    println!("{} nuisance fits, {} thresholds, {:.1?}", est.fits.len(), est.u_grid.len(), start.elapsed());
    for f in &est.failures {
        println!("failed {}: {}", f.estimand, f.message);
    }
    for r in &est.results {
        let b = r.bands.as_ref();
        match &r.grid {
            None => println!(
                "{}: {:.4} (analytic se {:.4}, bootstrap se {:.4})",
                r.label(),
                r.estimates[0],
                r.se_analytic.as_ref().map(|s| s[0]).unwrap_or(f64::NAN),
                r.se_bootstrap[0]
            ),
            Some(grid) => {
                let covered = b.map(|b| {
                    (0..grid.len())
                        .filter(|&j| !b.excluded[j])
                        .all(|j| b.uniform_lower[j] <= effect && effect <= b.uniform_upper[j])
                });
                println!("{}: uniform cv {:.3}, band covers {effect}: {:?}", r.label(), b.map(|b| b.cv_uniform).unwrap_or(f64::NAN), covered);
                for j in (0..grid.len()).step_by(10) {
                    println!(
                        "  tau {:.2}: {:+.4} se {:.4} [{:+.4}, {:+.4}]",
                        grid[j],
                        r.estimates[j],
                        r.se_bootstrap[j],
                        b.map(|b| b.uniform_lower[j]).unwrap_or(f64::NAN),
                        b.map(|b| b.uniform_upper[j]).unwrap_or(f64::NAN)
                    );
                }
            }
        }
    }
    Ok(())
}
