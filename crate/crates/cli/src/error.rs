use std::fmt;
use std::path::Path;

use fedtrade_core::FedError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const DIVERGENCE: i32 = 4;
    pub const PARTIAL_SWEEP: i32 = 5;
}

/// An error carrying the exit code it should terminate the process with.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(exit::CONFIG, message)
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::new(exit::IO, format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

/// Exit code for a library error.
pub fn exit_code(err: &FedError) -> i32 {
    if err.is_divergence() {
        return exit::DIVERGENCE;
    }
    match err {
        FedError::Config { .. } => exit::CONFIG,
        FedError::Io { .. } | FedError::Manifest { .. } => exit::IO,
        FedError::InClient { source, .. } => exit_code(source),
        _ => exit::INTERNAL,
    }
}

impl From<FedError> for CliError {
    fn from(err: FedError) -> Self {
        CliError::new(exit_code(&err), err.to_string())
    }
}
