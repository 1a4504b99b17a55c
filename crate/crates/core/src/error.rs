use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("index {index} out of bounds: {msg}")]
    Bounds { index: String, msg: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid configuration `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("malformed data in {}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { op, msg: msg.into() }
    }

    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain { op, msg: msg.into() }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    ///
    /// 1 = configuration, 2 = data or I/O, 3 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::Format { .. } | Error::Data(_) | Error::Io { .. } => 2,
            Error::NonFinite(_) | Error::GradCheck(_) => 3,
            Error::Shape { .. } | Error::Domain { .. } | Error::Contract(_) | Error::Bounds { .. } => 3,
        }
    }
}
