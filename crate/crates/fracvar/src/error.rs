//! Error types shared across the crate.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data is malformed (non-finite samples, mismatched grids, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A coefficient field violates an ellipticity or positivity requirement.
    #[error("ellipticity violation: {0}")]
    Ellipticity(String),

    /// An iterative limit did not converge within its schedule.
    #[error("convergence failure: {message} (last distance {last_distance:e})")]
    Convergence { message: String, last_distance: f64 },

    /// The reference quadrature oracle could not certify its own accuracy.
    #[error("oracle failure: {0}")]
    Oracle(String),

    /// A linear solve or eigenvalue computation failed.
    #[error("solver failure: {0}")]
    Solve(String),

    /// A run configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// An expression failed to parse; `offset` is a byte offset into the input.
    #[error("parse error at byte {offset}: expected {expected}, found {found}")]
    Parse {
        offset: usize,
        expected: String,
        found: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for structured error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Data(_) => "data",
            Error::Ellipticity(_) => "ellipticity",
            Error::Convergence { .. } => "convergence",
            Error::Oracle(_) => "oracle",
            Error::Solve(_) => "solver",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
