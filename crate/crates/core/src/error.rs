use thiserror::Error;

use crate::market::MarketState;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("arm a1={a1} has no non-responders")]
    EmptyArm { a1: i8 },

    #[error("market did not clear within {iterations} price updates (best error {best_error:.6})")]
    NonConvergence {
        iterations: usize,
        best_error: f64,
        best: Box<MarketState>,
    },

    #[error("rank-deficient design matrix; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("too few rows for fit: {rows} rows, {params} parameters")]
    TooFewRows { rows: usize, params: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("no support for DTR ({d1},{d2}): sum of weights is zero")]
    NoSupport { d1: i8, d2: i8 },

    #[error("positivity violated: {0}")]
    Positivity(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{failed} of {total} replicates failed (limit {limit}); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: usize,
        first: String,
    },

    #[error("scenario {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
