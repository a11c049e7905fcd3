use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("empty input file: {path}")]
    EmptyFile { path: String },

    #[error("cannot parse cell at row {row}, column {column} ({name:?}): {value:?}")]
    UnparseableCell {
        row: usize,
        column: usize,
        name: String,
        value: String,
    },

    #[error("row {row} has {found} fields, expected {expected}")]
    DimensionMismatch {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("response column {0:?} not found")]
    ResponseColumnNotFound(String),

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coordinate descent did not converge after {sweeps} sweeps (kkt_gap = {kkt_gap:.3e}) at lambda = {lambda}")]
    NonConvergence {
        sweeps: usize,
        kkt_gap: f64,
        lambda: f64,
        best: Box<crate::lasso::LassoFit>,
    },

    #[error("solver failed at grid index {grid_index}: {source}")]
    PathFit {
        grid_index: usize,
        source: Box<Error>,
    },

    #[error("column {column} of X_A is linearly dependent on preceding columns")]
    RankDeficient { column: usize },

    #[error("signal calibration impossible: ||X v||_2 = 0 with SNR > 0")]
    ZeroSignalDirection,

    #[error("replicate {replicate} failed: {source}")]
    ReplicateFailed {
        replicate: usize,
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
