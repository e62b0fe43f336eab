use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto CLI exit codes: configuration and I/O problems exit 2,
/// data problems exit 3, resource limits exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path} (line {line}): {source}", line = .line.map(|l| l.to_string()).unwrap_or_else(|| "-".into()))]
    Io {
        path: PathBuf,
        line: Option<usize>,
        #[source]
        source: std::io::Error,
    },

    #[error("data error: {0}")]
    Data(String),

    /// Hotspot statistic undefined: fewer than 3 zones.
    #[error("no variance: {0}")]
    NoVariance(String),

    /// Flow table with every origin weight zero.
    #[error("empty flow table: {0}")]
    EmptyFlowTable(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            line: None,
            source,
        }
    }

    pub fn io_at(path: impl Into<PathBuf>, line: usize, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            line: Some(line),
            source,
        }
    }

    /// Prefixes the failing pipeline stage onto the message, keeping the
    /// variant (and exit code) intact.
    pub fn with_stage(self, stage: &str) -> Self {
        match self {
            Error::InvalidGeometry(m) => Error::InvalidGeometry(format!("[{stage}] {m}")),
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("[{stage}] {m}")),
            Error::Config(m) => Error::Config(format!("[{stage}] {m}")),
            Error::Data(m) => Error::Data(format!("[{stage}] {m}")),
            Error::NoVariance(m) => Error::NoVariance(format!("[{stage}] {m}")),
            Error::EmptyFlowTable(m) => Error::EmptyFlowTable(format!("[{stage}] {m}")),
            Error::ResourceLimit(m) => Error::ResourceLimit(format!("[{stage}] {m}")),
            io @ Error::Io { .. } => io,
        }
    }

    /// Exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } => 2,
            Error::InvalidGeometry(_)
            | Error::InvalidArgument(_)
            | Error::Data(_)
            | Error::NoVariance(_)
            | Error::EmptyFlowTable(_) => 3,
            Error::ResourceLimit(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
