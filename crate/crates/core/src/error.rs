use thiserror::Error;

/// Errors produced by the loss model, fitting, simulation and allocation code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite summand at mode n = {node}")]
    NonFinite { node: f64 },

    /// Some trained mode fails to contract: |1 - gamma*Q/n^q| >= 1.
    #[error("unstable dynamics: |1 - gamma*Q/n^q| >= 1 at mode n = {mode}")]
    Unstable { mode: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("underdetermined fit: {records} records for {params} parameters")]
    Underdetermined { records: usize, params: usize },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("infeasible: no grid point satisfies {0}")]
    Infeasible(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
