use thiserror::Error;

/// Errors produced by the eigenvalue-bound pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("coefficient error: {0}")]
    Coefficient(String),

    #[error("matrix error: {0}")]
    Matrix(String),

    #[error("eigensolver did not converge after {applications} operator applications (residual {residual:.3e})")]
    Convergence { applications: usize, residual: f64 },

    #[error("dense oracle refused: dimension {dim} exceeds {max}")]
    TooLarge { dim: usize, max: usize },

    #[error("certificate failure: beta = {beta:.6e} >= lambda_star = {lambda_star:.6e}; refine and recompute")]
    Certificate { beta: f64, lambda_star: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
