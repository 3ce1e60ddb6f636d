use thiserror::Error;

/// Errors produced by the estimation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Data(String),

    #[error("{what}: parse error at line {line}: {msg}")]
    Parse { what: String, line: usize, msg: String },

    #[error("catalog version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes and the C API.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn parse(what: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { what: what.into(), line, msg: msg.into() }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::Numerical(_) => ErrorClass::Numerical,
            Error::Context { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable tag for error reports.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Data(_) => "data",
            Error::Parse { .. } => "parse",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Numerical(_) => "numerical",
            Error::Context { source, .. } => source.tag(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
