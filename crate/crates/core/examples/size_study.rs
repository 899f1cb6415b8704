//! Reduced-scale size study: rejection frequencies of naive and orthogonal
//! ATE tests over a small grid of covariate strengths.
//!
//! Usage: `cargo run --release --example size_study -- [replications]`

use hdte::simulation::{run_size_experiment, SimConfig};

fn main() -> hdte::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = SimConfig {
        r2_d: vec![0.0, 0.5, 0.9],
        r2_y: vec![0.0, 0.5, 0.9],
        replications: reps,
        intercept: std::env::args().nth(2).map(|s| s != "no-intercept").unwrap_or(true),
        ..SimConfig::default()
    };
    let start = std::time::Instant::now();
    let table = run_size_experiment(&cfg)?;
    println!("r2_d  r2_y  orthogonal  naive   (mean orth, mean naive) (sd orth, sd naive)");
    for c in &table.cells {
        println!(
            "{:.1}   {:.1}   {:.3}       {:.3}   ({:+.3}, {:+.3}) ({:.3}, {:.3}) fail={} flag={}",
            c.r2_d, c.r2_y, c.reject_orthogonal, c.reject_naive, c.mean_orthogonal, c.mean_naive, c.sd_orthogonal, c.sd_naive, c.failed, c.naive_flagged
        );
    }
    println!("{} replications per cell in {:.1?}", reps, start.elapsed());
    Ok(())
}
