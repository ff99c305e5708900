use std::path::PathBuf;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum FedError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("chain is not ergodic: {0}")]
    Ergodicity(String),

    #[error("chain is nearly periodic: second eigenvalue modulus {rho} >= 1 - 1e-12")]
    NearPeriodic { rho: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("coverage violated: behavior({action}|{state}) = 0 while target({action}|{state}) = {target}")]
    Coverage {
        state: usize,
        action: usize,
        target: f64,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("rank deficiency: {0}")]
    Rank(String),

    #[error("diverged at step {t} on agent {agent}: non-finite parameter")]
    Divergence { t: usize, agent: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, FedError>;

impl FedError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FedError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        FedError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
