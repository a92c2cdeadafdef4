use std::fmt;
use std::path::PathBuf;

use splatvid::Error;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const PARSE: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: PathBuf, source: std::io::Error },
    Parse(String),
    Core(Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Io { .. } => exit::IO,
            CliError::Parse(_) => exit::PARSE,
            CliError::Core(e) => match e.root() {
                Error::Io { .. } => exit::IO,
                Error::Image(_) | Error::Bitstream(_) | Error::ClipFormat(_) => exit::PARSE,
                Error::NonFiniteLoss { .. } | Error::InvalidSplat(_) | Error::SlotMap(_) => exit::NUMERIC,
                Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::EmptyImage => exit::USAGE,
                Error::Frame { .. } => unreachable!("root error has no frame context"),
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Parse(m) => f.write_str(m),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}
