use std::io;
use std::path::Path;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An attribute or training configuration violates its invariants.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied argument is out of range or inconsistent.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A malformed line in an input file.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("{source_name}: invalid UTF-8 at byte offset {offset}")]
    Encoding { source_name: String, offset: u64 },

    /// Inputs parsed fine but do not line up (missing documents, queries, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            context: path.display().to_string(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for usage/validation problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Invalid(_) => 2,
            _ => 1,
        }
    }
}
