//! Command layer of the detection-dataset toolkit.
//!
//! Commands are plain functions over a validated [`config::PipelineConfig`];
//! the binary in `main.rs` only parses arguments and maps errors to exit
//! codes (0 success, 1 validation failure, 2 runtime data error). Every
//! command is deterministic given its configuration, including the worker
//! count: per-frame seeds are derived from the global seed and frame
//! identity, so scheduling cannot reorder randomness.

pub mod commands;
pub mod config;
pub mod report;

/// Command-layer error, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments, or unresolvable paths (exit 1).
    Validation(String),
    /// Unreadable or inconsistent data at run time (exit 2).
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
