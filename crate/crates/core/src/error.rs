use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {func}: {msg}")]
    Domain { func: &'static str, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("SDE unavailable: {0}")]
    ModelUnavailable(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("threshold not representable: {0}")]
    Threshold(String),

    #[error("unstable regime: {0}")]
    Stability(String),

    #[error("divergent regime: delta = {delta}")]
    DivergentRegime { delta: f64 },

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eig})")]
    NotPsd { min_eig: f64 },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(field: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        msg: msg.into(),
    }
}
