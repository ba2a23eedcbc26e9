use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The variants are grouped so that the command-line front end can map
/// each family onto a distinct exit code (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// A sensor frame or data row violates its invariants.
    #[error("invalid data: {0}")]
    Validation(String),

    /// A malformed or inconsistent input file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// A caller-supplied argument is outside its domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numerical routine met non-finite values or an annihilated state.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The training set cannot support the requested model.
    #[error("training error: {0}")]
    Training(String),

    /// A model or profile document is malformed or incompatible.
    #[error("model format error: {0}")]
    Format(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_IO: i32 = 5;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error family.
    ///
    /// | code | family                                  |
    /// |------|-----------------------------------------|
    /// | 2    | configuration, arguments, model formats |
    /// | 3    | data validation, parsing, training data |
    /// | 4    | numerical failure                       |
    /// | 5    | filesystem I/O                          |
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Format(_) => EXIT_CONFIG,
            Error::Validation(_) | Error::Parse { .. } | Error::Training(_) => EXIT_DATA,
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Io { .. } => EXIT_IO,
        }
    }
}
