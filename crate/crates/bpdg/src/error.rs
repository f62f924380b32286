use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// Every problem found while validating a configuration, in one list.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("periodic compatibility violated: imbalance {imbalance:e} exceeds {tolerance:e}")]
    Compatibility { imbalance: f64, tolerance: f64 },

    #[error("negative cell average {value:e} in cell ({i}, {k}, {m})")]
    NegativeAverage {
        i: usize,
        k: usize,
        m: usize,
        value: f64,
    },

    #[error("step failure: {0}")]
    Step(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Domain(_) | Error::Io(_) => 1,
            Error::Index(_) | Error::MeshMismatch(_) => 1,
            Error::Compatibility { .. } | Error::NegativeAverage { .. } | Error::Step(_) => 2,
            Error::Invariant(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
