use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NphError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NphError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric overflow in {0}")]
    NumericOverflow(&'static str),

    #[error("invalid phase-type representation: {0}")]
    Validation(String),

    #[error("scaling parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("degenerate level weights: {0}")]
    DegenerateWeights(String),

    #[error("state {state} received no occupation time; try fewer phases or another restart")]
    StateStarvation { state: usize },

    #[error("density underflow at observation {index} (y = {y})")]
    DensityUnderflow { index: usize, y: f64 },

    #[error("censored observation {index} on ({lower}, {upper}] has probability below the 1e-300 floor")]
    ZeroProbabilityInterval { index: usize, lower: f64, upper: f64 },

    #[error("all {restarts} restarts failed: {details}")]
    FitFailure { restarts: usize, details: String },

    #[error("target distribution: {0}")]
    Target(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("model file: {0}")]
    ModelFile(String),
}
