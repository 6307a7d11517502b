use thiserror::Error;

/// Errors produced by the udeuq library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("value {value} lies outside the domain of {what}")]
    OutOfDomain { what: String, value: f64 },
    #[error("degenerate state: {0}")]
    DegenerateState(String),
    #[error("simulation failed: {0}")]
    SimulationFailure(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("no fit in the ensemble has a finite likelihood")]
    EmptyEnsemble,
    #[error("sampler initialization failed: {0}")]
    Initialization(String),
    #[error("all simulations failed (draws {0:?})")]
    AllSimulationsFailed(Vec<usize>),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context,
                expected,
                got,
            })
        }
    }
}
