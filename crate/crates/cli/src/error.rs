//! Command failures and the exit-code contract.

use subdiff::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(Error),
    #[error("solver error: {0}")]
    Solver(Error),
    #[error("training error: {0}")]
    Training(Error),
    #[error("inversion error: {0}")]
    Inversion(Error),
    #[error("i/o error: {0}")]
    Io(Error),
}

impl CliError {
    /// 0 is success; argument parsing failures exit with 2 as well.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Solver(_) => 3,
            Self::Training(_) => 4,
            Self::Inversion(_) => 5,
            Self::Io(_) => 6,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tags a library error with the pipeline stage it came from. File-level
/// failures are reported as I/O whatever the stage.
pub trait Stage<T> {
    fn config(self) -> CliResult<T>;
    fn solver(self) -> CliResult<T>;
    fn training(self) -> CliResult<T>;
    fn inversion(self) -> CliResult<T>;
    fn io(self) -> CliResult<T>;
}

fn tag(e: Error, stage: fn(Error) -> CliError) -> CliError {
    match e {
        Error::Io(_) | Error::Format { .. } | Error::Json(_) => CliError::Io(e),
        e => stage(e),
    }
}

impl<T> Stage<T> for subdiff::Result<T> {
    fn config(self) -> CliResult<T> {
        self.map_err(|e| tag(e, CliError::Config))
    }
    fn solver(self) -> CliResult<T> {
        self.map_err(|e| tag(e, CliError::Solver))
    }
    fn training(self) -> CliResult<T> {
        self.map_err(|e| tag(e, CliError::Training))
    }
    fn inversion(self) -> CliResult<T> {
        self.map_err(|e| tag(e, CliError::Inversion))
    }
    fn io(self) -> CliResult<T> {
        self.map_err(CliError::Io)
    }
}

pub fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(Error::Precondition(msg.into()))
}
