use std::path::PathBuf;

/// Errors produced by the library.
///
/// The variants follow the failure classes of the system: invalid arguments
/// to a numerical routine, invalid configuration, enumeration budgets, and
/// training aborts caused by diverging parameters.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("enumeration budget exceeded: {outcomes} joint outcomes > limit {limit}")]
    Resource { outcomes: u128, limit: u128 },

    #[error("training aborted at iteration {iteration}: {reason}")]
    Abort { iteration: u64, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for this error: 1 for invalid input, 2 for
    /// failures while computing.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } | Error::Json(_) => 1,
            Error::Domain(_) | Error::Resource { .. } | Error::Abort { .. } => 2,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
