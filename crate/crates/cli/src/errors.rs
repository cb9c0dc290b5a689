//! Error type that carries the process exit code.
//!
//! Exit codes: 0 success, 2 invalid configuration or arguments, 3 missing
//! upstream artifact (the message names the subcommand that produces it),
//! 1 anything else.

use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    /// The configuration (file, preset, or flags) is invalid.
    Config(String),
    /// A required artifact from an earlier pipeline stage does not exist.
    Missing {
        what: String,
        path: PathBuf,
        producer: String,
    },
    /// Any other failure: IO, training, numerical.
    Other(anyhow::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Other(_) => 1,
        }
    }

    pub fn missing(what: &str, path: PathBuf, producer: &str) -> CliError {
        CliError::Missing {
            what: what.to_string(),
            path,
            producer: producer.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            CliError::Missing {
                what,
                path,
                producer,
            } => write!(
                f,
                "missing {what}: {} not found; run `neutralyze {producer}` first",
                path.display()
            ),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<neutralyze_core::Error> for CliError {
    fn from(e: neutralyze_core::Error) -> Self {
        CliError::Other(anyhow::Error::new(e))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(anyhow::Error::new(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(anyhow::Error::new(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(anyhow::Error::new(e))
    }
}
