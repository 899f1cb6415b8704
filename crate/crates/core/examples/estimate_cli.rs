//! The command-line driver run in-process: writes a simulated CSV, points
//! `configs/estimate.json` at it, runs `estimate`, and lists the outputs.
//!
//! The same run from a shell:
//! `hdte estimate --config configs/estimate.json --input data.csv --output-dir out`

use std::io::Write;

use hdte::simulation::gen_one_sided_iv;

fn main() -> hdte::Result<()> {
    let dir = tempfile::tempdir()?;
    let data = gen_one_sided_iv(800, 3, 0.5, 9)?;
    let csv_path = dir.path().join("data.csv");
    let mut out = std::fs::File::create(&csv_path)?;
    writeln!(out, "y,d,z,x1,x2,x3")?;
    for i in 0..data.n() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            data.y[i],
            data.d[i],
            data.z[i],
            data.x[(i, 0)],
            data.x[(i, 1)],
            data.x[(i, 2)]
        )?;
    }
    drop(out);

    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/estimate.json");
    let out_dir = dir.path().join("out");
    let code = hdte::cli::run([
        "hdte",
        "estimate",
        "--config",
        config,
        "--input",
        csv_path.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--replications",
        "200",
    ]);
    println!("exit code {code}");
    let mut names: Vec<_> = std::fs::read_dir(&out_dir)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
    names.sort();
    for name in names {
        println!("  {}", name.to_string_lossy());
    }
    let late = std::fs::read_to_string(out_dir.join("LATE.csv"))?;
    print!("{late}");
    Ok(())
}
