//! CLI error taxonomy: configuration problems exit with status 2 and name
//! the offending field, runtime problems exit with status 1. Both print a
//! machine-readable `key = value` record to stderr.

use rydsim_core::CoreError;
use std::fmt;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug)]
pub enum CliError {
    /// The config (file or `--set` override) failed to parse or validate.
    Validation { field: String, message: String },
    /// A campaign, fit, or artifact write failed after validation passed.
    Runtime { message: String },
}

impl CliError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Validation { field: field.into(), message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime { message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => EXIT_VALIDATION,
            CliError::Runtime { .. } => EXIT_RUNTIME,
        }
    }

    /// Structured-text error record for stderr.
    pub fn record(&self) -> String {
        match self {
            CliError::Validation { field, message } => {
                format!("error = validation\nfield = {field}\nmessage = {message}\n")
            }
            CliError::Runtime { message } => {
                format!("error = runtime\nmessage = {message}\n")
            }
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation { field, message } => write!(f, "{field}: {message}"),
            CliError::Runtime { message } => write!(f, "{message}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        // Parameter-shaped core errors surface before any computation and
        // are really config problems; everything else is a runtime failure.
        match err {
            CoreError::InvalidParameter { name, message } => {
                CliError::Validation { field: crate::config::config_key_for(name), message }
            }
            CoreError::InvalidInput { name, message } => {
                CliError::Validation { field: crate::config::config_key_for(name), message }
            }
            CoreError::Configuration(message) => {
                CliError::Validation { field: "config".to_string(), message }
            }
            other => CliError::Runtime { message: other.to_string() },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime { message: err.to_string() }
    }
}
