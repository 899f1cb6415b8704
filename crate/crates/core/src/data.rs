//! Observation storage and CSV ingestion.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which CSV columns play the outcome, treatment and instrument roles.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ColumnRoles {
    pub y: String,
    pub d: String,
    /// Instrument column. When absent the treatment is its own instrument.
    #[serde(default)]
    pub z: Option<String>,
}

/// Observations `(y, d, z, x)`; `x` holds the raw covariates column by column.
#[derive(Debug, Clone)]
pub struct RawData {
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub z: Vec<f64>,
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

fn check_binary(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|&t| t != 0.0 && t != 1.0) {
        Some(i) => Err(Error::InvalidInput(format!(
            "{name} must be 0/1, found {} at row {i}",
            v[i]
        ))),
        None => Ok(()),
    }
}

impl RawData {
    pub fn new(y: Vec<f64>, d: Vec<f64>, z: Vec<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if d.len() != n || z.len() != n || x.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows, d {}, z {}, x {}",
                d.len(),
                z.len(),
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        check_binary("treatment", &d)?;
        check_binary("instrument", &z)?;
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite outcome or covariate".into()));
        }
        Ok(Self { y, d, z, x, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Returns a copy with `shift` added to every outcome.
    pub fn with_shifted_outcome(&self, shift: f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v += shift);
        out
    }

    pub fn read_csv<P: AsRef<Path>>(path: P, roles: &ColumnRoles) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, roles)
    }

    /// Parses an RFC-4180 document with a header row. Columns other than the
    /// role columns become raw covariates in file order.
    pub fn from_csv_reader<R: Read>(reader: R, roles: &ColumnRoles) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(&e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::UnknownColumn(name.to_string()))
        };
        let iy = find(&roles.y)?;
        let id = find(&roles.d)?;
        let iz = match &roles.z {
            Some(z) => find(z)?,
            None => id,
        };
        let cov_idx: Vec<usize> = (0..header.len()).filter(|&j| j != iy && j != id && j != iz).collect();
        let names: Vec<String> = cov_idx.iter().map(|&j| header[j].clone()).collect();

        let (mut y, mut d, mut z) = (Vec::new(), Vec::new(), Vec::new());
        let mut xs: Vec<f64> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(&e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let field = |j: usize| -> Result<f64> {
                let raw = rec.get(j).unwrap_or("").trim();
                let v: f64 = raw.parse().map_err(|_| Error::Csv {
                    line,
                    message: format!("column `{}`: cannot parse `{raw}` as a number", header[j]),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Csv {
                        line,
                        message: format!("column `{}`: missing or non-finite value", header[j]),
                    })
                }
            };
            y.push(field(iy)?);
            d.push(field(id)?);
            z.push(field(iz)?);
            for &j in &cov_idx {
                xs.push(field(j)?);
            }
        }
        let n = y.len();
        let x = DMatrix::from_row_slice(n, cov_idx.len(), &xs);
        Self::new(y, d, z, x, names)
    }
}

fn csv_error(e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Csv {
        line,
        message: e.to_string(),
    }
}
