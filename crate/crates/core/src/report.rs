//! Tables and run manifests.
//!
//! Every number written to CSV uses 17 significant digits so that two runs
//! can be compared byte for byte.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dictionary::DesignMatrix;
use crate::error::Result;
use crate::pipeline::EffectResult;
use crate::simulation::SizeTable;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `x` with 17 significant digits in scientific notation; `NaN` and
/// infinities spelled out.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

fn opt17(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_default()
}

fn csv_string<F>(header: &[&str], fill: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let wrap = |e: csv::Error| crate::error::Error::Csv {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(header).map_err(wrap)?;
    fill(&mut w).map_err(wrap)?;
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per grid point: index, estimate, standard errors, both bands and
/// the inversion flag.
pub fn effect_table_csv(r: &EffectResult) -> Result<String> {
    let header = [
        "index",
        "estimate",
        "se_analytic",
        "se_bootstrap",
        "pointwise_lower",
        "pointwise_upper",
        "uniform_lower",
        "uniform_upper",
        "flag",
    ];
    csv_string(&header, |w| {
        for j in 0..r.estimates.len() {
            let band = |pick: fn(&crate::bootstrap::Bands) -> &Vec<f64>| opt17(r.bands.as_ref().map(|b| pick(b)[j]));
            w.write_record([
                opt17(r.grid.as_ref().map(|g| g[j])),
                fmt17(r.estimates[j]),
                opt17(r.se_analytic.as_ref().map(|s| s[j])),
                fmt17(r.se_bootstrap[j]),
                band(|b| &b.pointwise_lower),
                band(|b| &b.pointwise_upper),
                band(|b| &b.uniform_lower),
                band(|b| &b.uniform_upper),
                serde_json::to_value(r.flags[j])
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

/// Bootstrap draws, one row per unflagged draw, one column per finite grid
/// point.
pub fn draws_csv(r: &EffectResult) -> Result<Option<String>> {
    let Some(draws) = &r.draws else { return Ok(None) };
    let header: Vec<String> = r
        .draw_points
        .iter()
        .map(|&j| match &r.grid {
            Some(g) => fmt17(g[j]),
            None => "value".into(),
        })
        .collect();
    let header_ref: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    csv_string(&header_ref, |w| {
        for row in draws {
            w.write_record(row.iter().map(|v| fmt17(*v)))?;
        }
        Ok(())
    })
    .map(Some)
}

/// Size-study table, one row per `(R^2_d, R^2_y)` cell.
pub fn size_table_csv(t: &SizeTable) -> Result<String> {
    let header = [
        "r2_d",
        "r2_y",
        "c_d",
        "c_y",
        "completed",
        "failed",
        "reject_orthogonal",
        "mc_se_orthogonal",
        "reject_naive",
        "mc_se_naive",
        "mean_orthogonal",
        "sd_orthogonal",
        "mean_naive",
        "sd_naive",
        "naive_flagged",
    ];
    csv_string(&header, |w| {
        for c in &t.cells {
            w.write_record([
                fmt17(c.r2_d),
                fmt17(c.r2_y),
                fmt17(c.c_d),
                fmt17(c.c_y),
                c.completed.to_string(),
                c.failed.to_string(),
                fmt17(c.reject_orthogonal),
                fmt17(c.mc_se_orthogonal),
                fmt17(c.reject_naive),
                fmt17(c.mc_se_naive),
                fmt17(c.mean_orthogonal),
                fmt17(c.sd_orthogonal),
                fmt17(c.mean_naive),
                fmt17(c.sd_naive),
                c.naive_flagged.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Heatmap-ready layout: row and column grids and one matrix per estimator.
pub fn size_heatmap_json(t: &SizeTable) -> serde_json::Value {
    let rows = &t.config.r2_d;
    let cols = &t.config.r2_y;
    let matrix = |pick: fn(&crate::simulation::SizeCell) -> f64| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&a| {
                cols.iter()
                    .map(|&b| t.cell(a, b).map(pick).unwrap_or(f64::NAN))
                    .collect()
            })
            .collect()
    };
    serde_json::json!({
        "r2_d": rows,
        "r2_y": cols,
        "level": t.config.level,
        "orthogonal": matrix(|c| c.reject_orthogonal),
        "naive": matrix(|c| c.reject_naive),
    })
}

/// Expanded design with labelled columns.
pub fn design_csv(m: &DesignMatrix) -> Result<String> {
    let header: Vec<&str> = m.labels.iter().map(|s| s.as_str()).collect();
    csv_string(&header, |w| {
        for i in 0..m.nrows() {
            w.write_record((0..m.ncols()).map(|j| fmt17(m.values[(i, j)])))?;
        }
        Ok(())
    })
}

/// SHA-256 of the JSON serialization of `config`, as lowercase hex.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}
