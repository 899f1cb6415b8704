use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{column}` produced a non-finite value at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("penalty level undefined: normal quantile argument {0} outside (0, 1)")]
    PenaltyDomain(f64),

    #[error("solver did not converge after {iterations} iterations (kkt residual {kkt_residual:.3e})")]
    NoConvergence { iterations: usize, kkt_residual: f64 },

    #[error("unbounded likelihood direction: {0}")]
    Unbounded(String),

    #[error("weak instrument: denominator {value:.3e} within tolerance {tol:.1e}")]
    WeakDenominator { value: f64, tol: f64 },

    #[error("missing nuisance fit for {0}")]
    MissingNuisance(String),

    #[error("quantile {tau} is never reached by the distribution curve")]
    QuantileUnreached { tau: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
