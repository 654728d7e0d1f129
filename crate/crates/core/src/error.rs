use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate domain: lo ({lo}) must be strictly below hi ({hi})")]
    DegenerateDomain { lo: f64, hi: f64 },

    #[error("interior knot {index} at {value} lies outside the open interval ({lo}, {hi})")]
    KnotOutOfDomain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("interior knots must be sorted and distinct (index {index})")]
    KnotsNotSorted { index: usize },

    #[error("difference penalty needs at least 3 basis functions, got {0}")]
    PenaltyUndefined(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}: row {row}, column '{column}': {reason}")]
    Cell {
        path: PathBuf,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("{path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("zero true value at index {0}; relative error undefined")]
    ZeroTarget(usize),

    #[error("empty input")]
    Empty,

    #[error("model document parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("run {run} (seed {seed}) failed: {source}")]
    Run {
        run: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the failure stems from bad input or usage rather than computation.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Numeric(_) => false,
            Error::Run { source, .. } => source.is_usage(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
