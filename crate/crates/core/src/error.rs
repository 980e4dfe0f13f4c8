use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got} at point {index}")]
    DimensionMismatch { expected: usize, got: usize, index: usize },

    #[error("oracle size limit exceeded: n = {n}, limit = {limit}")]
    OracleTooLarge { n: usize, limit: usize },

    #[error("value iteration did not converge within {max_sweeps} sweeps (last residual {last_residual:e})")]
    NonConvergence { max_sweeps: usize, last_residual: f64, trace: Vec<f64> },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Config(#[from] crate::harness::ConfigError),

    #[error("fixture missing: {0}")]
    FixtureMissing(String),

    #[error("singular linear system")]
    Singular,

    #[error("{}: {source}", path.display())]
    Io { path: std::path::PathBuf, source: std::io::Error },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
