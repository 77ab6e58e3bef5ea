//! Command-line driver: run searches against configured backends, persist
//! traces and manifests, analyze traces, and verify configurations.

pub mod commands;
pub mod manifest;

use std::fmt;

/// CLI failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration, arguments, or inputs (exit 1).
    Config(String),
    /// A configured backend did not answer its health check (exit 2).
    Unreachable(String),
    /// A run aborted mid-way; the partial trace was flushed (exit 3).
    Aborted(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Unreachable(_) => 2,
            CliError::Aborted(_) => 3,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(message) => write!(f, "{message}"),
            CliError::Unreachable(message) => write!(f, "backend unreachable: {message}"),
            CliError::Aborted(message) => write!(f, "run aborted: {message}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("io error: {e}"))
    }
}

impl From<darwin::ConfigError> for CliError {
    fn from(e: darwin::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<darwin::TraceError> for CliError {
    fn from(e: darwin::TraceError) -> Self {
        CliError::Config(e.to_string())
    }
}
