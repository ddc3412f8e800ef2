use thiserror::Error;

/// Errors raised across the forecasting toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("topology error: {0}")]
    Topology(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value {value} outside the tabulated variance range [0, {max}]; rebuild the table with a larger s_max")]
    OutOfRange { value: f64, max: f64 },

    #[error("ill-conditioned system: {0} (increase the jitter or the observation noise)")]
    IllConditioned(String),

    #[error("hyperparameter fitting failed: {message}")]
    Fitting {
        message: String,
        /// Best log-parameter vector seen before the failure, if any.
        best_log_params: Option<Vec<f64>>,
    },

    #[error("numerical consistency violated: {0}")]
    NumericalConsistency(String),

    #[error("undefined sensitivity index: {0}")]
    UndefinedIndex(String),

    #[error("insufficient history: need hours from {needed_from}, dataset starts at 0 (forecast hour {hour})")]
    InsufficientHistory { hour: usize, needed_from: i64 },

    #[error("zero actual load at hour {0}; MAPE undefined")]
    ZeroActual(usize),

    #[error("component {component}: {source}")]
    Component {
        component: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

/// Coarse classification used to map failures to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Topology(_)
            | Error::Input(_)
            | Error::Config(_)
            | Error::DimensionMismatch { .. }
            | Error::InsufficientHistory { .. }
            | Error::ZeroActual(_)
            | Error::Parse(_) => ErrorKind::Validation,
            Error::OutOfRange { .. }
            | Error::IllConditioned(_)
            | Error::Fitting { .. }
            | Error::NumericalConsistency(_)
            | Error::UndefinedIndex(_) => ErrorKind::Numerical,
            Error::Io(_) | Error::Csv(_) => ErrorKind::Io,
            Error::Component { source, .. } => source.kind(),
        }
    }

    pub(crate) fn in_component(self, component: usize) -> Error {
        Error::Component {
            component,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
