//! Command-line front end and HTTP service for `stylegan-lens`.

pub mod args;
pub mod commands;
pub mod service;

use std::fmt;
use std::path::PathBuf;

use stylegan_lens::{CheckpointError, Error};

/// Environment variable naming the default output directory.
pub const HOME_ENV: &str = "STYLEGAN_LENS_HOME";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const MISMATCH: i32 = 4;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: exit::USAGE,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: std::io::Error) -> Self {
        Self {
            code: exit::IO,
            message: format!("{}: {e}", path.into().display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn checkpoint_code(e: &CheckpointError) -> i32 {
    match e {
        CheckpointError::MissingKey(_) | CheckpointError::ShapeMismatch { .. } => exit::MISMATCH,
        CheckpointError::Collision(_) | CheckpointError::DuplicateKey(_) => exit::USAGE,
        _ => exit::IO,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) => exit::USAGE,
            Error::Io { .. } => exit::IO,
            Error::Checkpoint(c) => checkpoint_code(c),
            Error::Config(_) | Error::Architecture(_) => exit::MISMATCH,
            _ => exit::FAILURE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self {
            code: checkpoint_code(&e),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
