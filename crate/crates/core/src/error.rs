use thiserror::Error;

/// Errors raised by the estimation, simulation and expansion pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("misaligned grid: k_n = {k_n} does not divide n = {n}")]
    MisalignedGrid { n: usize, k_n: usize },

    #[error("invalid weight function: {0}")]
    InvalidWeight(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("index {index} out of range (need index + k_n <= {n})")]
    OutOfRange { index: usize, n: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("simulation diverged at step {step} (|X| = {value:e})")]
    SimulationDiverged { step: usize, value: f64 },

    #[error("degenerate variance estimate F_n = {0:e}; studentization impossible")]
    DegenerateVariance(f64),

    #[error("invalid Edgeworth expansion: corrected CDF not repairable on [{lo}, {hi}]")]
    InvalidExpansion { lo: f64, hi: f64 },

    #[error("tainted replication: path {path} (master seed {seed}) produced a non-finite functional")]
    TaintedReplication { path: u64, seed: u64 },

    #[error("study invalid: {tainted} of {total} replications tainted (limit 1%)")]
    StudyInvalid { tainted: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
