use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Integer lattice sizes exceeded the 64-bit range (or the address space).
    #[error("lattice size overflow: {0}")]
    Capacity(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Diffusivity outside the explicit-scheme stability range [0, 1/2].
    #[error("unstable diffusivity D = {d}: {hint}")]
    Stability { d: f64, hint: String },

    #[error("no decay to fit: {0}")]
    NoDecay(String),

    #[error("gamma function domain error: x = {0} must be positive")]
    GammaDomain(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
