use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty reduction")]
    EmptyReduction,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("not PSD-repairable after {attempts} ridge escalations (last ridge {last_ridge:e})")]
    NotPsdRepairable { attempts: usize, last_ridge: f64 },

    #[error("sinkhorn did not converge in {iterations} iterations (marginal violation {violation:e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("empty class aggregation for class {0}")]
    EmptyClassAggregation(usize),

    #[error("zero total transport mass for class {0}")]
    ZeroMass(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("class {class}: {source}")]
    Class {
        class: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn in_class(self, class: usize) -> Self {
        Error::Class {
            class,
            source: Box::new(self),
        }
    }

    /// Errors caused by user input (config files, paths, flags) rather than
    /// numerical failure. The CLI maps these to exit code 1.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => true,
            Error::Class { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
