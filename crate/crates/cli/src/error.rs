//! Error type for the binary, split by exit code.
//!
//! Configuration problems (unreadable file, bad TOML, missing or invalid
//! fields) exit with code 2; failures that occur after a valid configuration
//! was accepted (I/O, checksum mismatches, numerical failures inside the
//! library) exit with code 1. On either path the binary prints a single
//! machine-readable JSON line to standard error before exiting.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// The configuration (file, flags, or environment) is invalid. Exit 2.
    Config(String),
    /// A valid run failed while executing. Exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    /// One-line JSON error report, e.g.
    /// `{"error":"config","message":"missing field `experiment.tag`"}`.
    pub fn report(&self) -> String {
        let (kind, message) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Runtime(m) => ("runtime", m),
        };
        serde_json::json!({ "error": kind, "message": message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Library errors surfacing mid-run are runtime failures; resolution code
/// that turns library validation into config errors maps them explicitly.
impl From<sgnn_core::Error> for CliError {
    fn from(e: sgnn_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_exit_2_and_runtime_errors_exit_1() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 1);
    }

    #[test]
    fn report_is_a_single_json_line_with_kind_and_message() {
        let line = CliError::Config("missing field `experiment.tag`".into()).report();
        let parsed: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(parsed["error"], "config");
        assert_eq!(parsed["message"], "missing field `experiment.tag`");
        assert!(!line.contains('\n'));
    }
}
