use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("tape error: {0}")]
    Graph(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero vector passed to {0}")]
    ZeroVector(&'static str),

    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("duplicate question id {0}")]
    DuplicateId(u64),

    #[error("unknown question id {0}")]
    UnknownId(u64),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn parse(source_name: &str, line: usize, msg: impl fmt::Display) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn config(key: &str, msg: impl fmt::Display) -> Self {
        Error::Config {
            key: key.to_string(),
            msg: msg.to_string(),
        }
    }
}
