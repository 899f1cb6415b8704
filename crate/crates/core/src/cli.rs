//! Command-line driver: `expand`, `estimate`, `simulate`, `version`.
//!
//! A run is described by one JSON document; command-line flags override the
//! matching fields. Exit codes: 0 success, 2 configuration error, 3
//! estimation failure, 4 I/O error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnRoles, RawData};
use crate::dictionary::{expand, prune_collinear, DesignMatrix, DictionarySpec, DEFAULT_COLLINEAR_TOL};
use crate::effects::Estimand;
use crate::error::{Error, Result};
use crate::pipeline::{estimate, EstimationConfig};
use crate::report::{
    config_hash, design_csv, draws_csv, effect_table_csv, size_heatmap_json, size_table_csv, to_json, write_file, VERSION,
};
use crate::simulation::{run_size_experiment, SimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "HDTE_THREADS";

/// The JSON run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub columns: Option<ColumnRoles>,
    /// Defaults to every covariate passed through unchanged, plus a constant
    /// column when estimating.
    pub dictionary: Option<DictionarySpec>,
    /// Relative tolerance for dropping collinear dictionary columns; zero
    /// keeps every column. When unset, an explicit dictionary is pruned at
    /// the default tolerance and the identity dictionary is kept whole.
    pub collinear_tol: Option<f64>,
    pub estimation: EstimationConfig,
    pub simulation: SimConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "hdte", version = VERSION, about = "Treatment effects with many controls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the control dictionary and write it as CSV.
    Expand(ExpandArgs),
    /// Estimate the configured treatment effects.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo size study.
    Simulate(SimulateArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (overrides `input`).
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExpandArgs {
    #[command(flatten)]
    common: Common,
    /// Output CSV for the design; a `.columns.json` manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Bootstrap master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap replications.
    #[arg(long)]
    replications: Option<usize>,
    /// Estimands, comma separated (for example `LATE,LQTE`).
    #[arg(long, value_delimiter = ',')]
    estimands: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV for the rejection table; JSON files are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::UnknownColumn(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Csv { .. } => EXIT_IO,
        _ => EXIT_ESTIMATION,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => match RunConfig::from_path(p) {
            Err(Error::Io(e)) => Err(Error::Config(format!("cannot read {}: {e}", p.display()))),
            other => other,
        },
        None => Ok(RunConfig::default()),
    }
}

fn load_data(cfg: &RunConfig, default_intercept: bool) -> Result<(RawData, DesignMatrix, serde_json::Value)> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file given".into()))?;
    let roles = cfg
        .columns
        .as_ref()
        .ok_or_else(|| Error::Config("`columns` with y and d roles is required".into()))?;
    let data = RawData::read_csv(input, roles).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", input.display()))),
        other => other,
    })?;
    let spec = cfg.dictionary.clone().unwrap_or_else(|| DictionarySpec {
        intercept: default_intercept,
        ..DictionarySpec::identity(&data.names)
    });
    let design = expand(&data, &spec).map_err(|e| match e {
        Error::InvalidInput(m) => Error::Config(format!("dictionary: {m}")),
        other => other,
    })?;
    // user dictionaries can produce exactly collinear columns (indicator
    // blocks next to an intercept), so they are pruned unless told otherwise
    let tol = cfg.collinear_tol.or(cfg.dictionary.as_ref().map(|_| DEFAULT_COLLINEAR_TOL));
    let (design, report) = match tol {
        Some(tol) if tol > 0.0 => {
            let (m, r) = prune_collinear(&design, tol).map_err(|e| Error::Config(e.to_string()))?;
            (m, Some(r))
        }
        _ => (design, None),
    };
    if design.ncols() == 0 {
        return Err(Error::Degenerate("dictionary has no columns after pruning".into()));
    }
    let summary = serde_json::json!({
        "columns": design.labels,
        "dropped_collinear": report.as_ref().map(|r| r.dropped.clone()).unwrap_or_default(),
    });
    Ok((data, design, summary))
}

fn run_expand(args: ExpandArgs) -> Result<i32> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if args.common.input.is_some() {
        cfg.input = args.common.input;
    }
    let (_, design, summary) = load_data(&cfg, false)?;
    write_file(&args.out, &design_csv(&design)?)?;
    let manifest = serde_json::json!({
        "version": VERSION,
        "config_hash": config_hash(&cfg)?,
        "design": summary,
    });
    write_file(&args.out.with_extension("columns.json"), &to_json(&manifest)?)?;
    Ok(EXIT_OK)
}

fn run_estimate(args: EstimateArgs) -> Result<i32> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    if args.common.input.is_some() {
        cfg.input = args.common.input;
    }
    if args.output_dir.is_some() {
        cfg.output_dir = args.output_dir;
    }
    if let Some(s) = args.seed {
        cfg.estimation.bootstrap.seed = s;
    }
    if let Some(b) = args.replications {
        cfg.estimation.bootstrap.replications = b;
    }
    if let Some(list) = args.estimands {
        cfg.estimation.estimands = list.iter().map(|s| s.parse::<Estimand>()).collect::<Result<_>>()?;
    }
    cfg.estimation.validate()?;
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory given".into()))?;
    let (data, design, summary) = load_data(&cfg, true)?;
    let est = estimate(&data, &design.values, &cfg.estimation)?;

    let mut outputs = Vec::new();
    for r in &est.results {
        let name = format!("{}.csv", r.label());
        write_file(&out.join(&name), &effect_table_csv(r)?)?;
        outputs.push(name);
        if let Some(d) = draws_csv(r)? {
            let name = format!("{}_draws.csv", r.label());
            write_file(&out.join(&name), &d)?;
            outputs.push(name);
        }
    }
    write_file(&out.join("effects.json"), &to_json(&est.results)?)?;
    outputs.push("effects.json".into());
    let b = &cfg.estimation.bootstrap;
    let draw_seeds: Vec<u64> = (0..b.replications as u64).map(|k| crate::bootstrap::draw_seed(b.seed, k)).collect();
    let manifest = serde_json::json!({
        "version": VERSION,
        "command": "estimate",
        "config_hash": config_hash(&cfg)?,
        "config": cfg,
        "n": data.n(),
        "design": summary,
        "exogenous": est.exogenous,
        "u_grid": est.u_grid,
        "trimmed": {"level": est.trimmed_level, "distribution": est.trimmed_distribution},
        "seeds": {"bootstrap_master": b.seed, "bootstrap_draws": draw_seeds},
        "fits": est.fits,
        "failures": est.failures,
        "outputs": outputs,
    });
    write_file(&out.join("manifest.json"), &to_json(&manifest)?)?;
    for f in &est.failures {
        eprintln!("hdte: {} failed: {}", f.estimand, f.message);
    }
    Ok(if est.results.is_empty() { EXIT_ESTIMATION } else { EXIT_OK })
}

fn run_simulate(args: SimulateArgs) -> Result<i32> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.simulation.seed = s;
    }
    if let Some(r) = args.replications {
        cfg.simulation.replications = r;
    }
    cfg.simulation.validate()?;
    let table = run_size_experiment(&cfg.simulation)?;
    write_file(&args.out, &size_table_csv(&table)?)?;
    write_file(&args.out.with_extension("heatmap.json"), &to_json(&size_heatmap_json(&table))?)?;
    let manifest = serde_json::json!({
        "version": VERSION,
        "command": "simulate",
        "config_hash": config_hash(&cfg.simulation)?,
        "config": cfg.simulation,
        "seeds": {"master": cfg.simulation.seed, "rule": "draw_seed(master, cell_index * replications + rep)"},
        "critical_value": table.critical_value,
    });
    write_file(&args.out.with_extension("manifest.json"), &to_json(&manifest)?)?;
    Ok(EXIT_OK)
}

/// Installs the global thread pool from `HDTE_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    let outcome = configure_threads().and_then(|_| match cli.command {
        Command::Expand(a) => run_expand(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Version => {
            println!("hdte {VERSION}");
            Ok(EXIT_OK)
        }
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("hdte: {e}");
            exit_code(&e)
        }
    }
}
