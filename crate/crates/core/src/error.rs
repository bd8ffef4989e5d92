use thiserror::Error;

/// Errors raised anywhere in the solver toolkit.
///
/// The type is `Clone` so that memoized arc fits can hand out the same
/// failure to every caller that touches the arc.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("phase-type fit for scv {scv} needs {required} phases, cap is {cap}")]
    FitDimension { scv: f64, required: usize, cap: usize },

    #[error("scv {scv} is below the configured minimum {min}")]
    ScvBelowMinimum { scv: f64, min: f64 },

    #[error("sojourn chain at position {position} has dimension {dim}, cap is {cap}")]
    ChainDimension { position: usize, dim: usize, cap: usize },

    #[error("numerical health check failed: {0}")]
    Numerical(String),

    #[error("parse error ({context}): {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("enumeration refused: n = {n} exceeds the cap of {cap}")]
    EnumerationCap { n: usize, cap: usize },

    #[error("search aborted with best objective {best_objective} on tour {best_tour:?}: {cause}")]
    SearchAborted {
        best_tour: Vec<usize>,
        best_objective: f64,
        cause: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
