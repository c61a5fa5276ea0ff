use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Array or matrix shapes that do not agree with the system configuration.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A deployment plan that overflows the storage of one or more servers.
    #[error("infeasible deployment: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite objective or loss; usually a configuration bug or divergence.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category, used by the CLI for exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Infeasible(_) => "infeasible",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Numerical(_) => "numerical",
            Error::TooLarge(_) => "too-large",
            Error::Io(_) => "io",
            Error::Csv(_) | Error::Json(_) => "format",
        }
    }
}
