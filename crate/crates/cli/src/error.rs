use std::fmt;

use micon_core::Error as CoreError;

/// A failed command with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub const CONFIG: i32 = 2;
    pub const TRAINING: i32 = 3;
    pub const MISSING: i32 = 4;
    pub const UNSATISFIABLE: i32 = 5;

    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: Self::CONFIG, msg: msg.into() }
    }

    pub fn training(msg: impl Into<String>) -> Self {
        Self { code: Self::TRAINING, msg: msg.into() }
    }

    pub fn missing(msg: impl Into<String>) -> Self {
        Self { code: Self::MISSING, msg: msg.into() }
    }

    pub fn unsatisfiable(msg: impl Into<String>) -> Self {
        Self { code: Self::UNSATISFIABLE, msg: msg.into() }
    }

    /// Wrap a core error raised while doing `what`, choosing the exit code by
    /// error kind; anything unclassified counts as `fallback`.
    pub fn core(what: &str, e: CoreError, fallback: i32) -> Self {
        let code = match &e {
            CoreError::NoCandidate(_) => Self::UNSATISFIABLE,
            CoreError::Diverged { .. } => Self::TRAINING,
            CoreError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Self::MISSING,
            _ => fallback,
        };
        Self { code, msg: format!("{what}: {e}") }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for CliError {}
