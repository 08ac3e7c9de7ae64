use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] prmkit_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for invalid configuration or input, 2 for
    /// runtime and provider failures.
    pub fn exit_code(&self) -> i32 {
        use prmkit_core::Error as E;
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Schema { .. } | Error::Format { .. } => 1,
            Error::Core(E::InvalidConfig(_) | E::InvalidInput(_) | E::TokenizerMismatch { .. }) => 1,
            Error::Core(_) | Error::Io { .. } => 2,
        }
    }
}
