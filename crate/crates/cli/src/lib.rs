//! Experiment harness around `mtksmm-core`: JSON configs, model and
//! dataset files, the three-method comparison runner, CSV/SVG export
//! and the `mtksmm` command-line interface.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod model_io;
pub mod runner;
pub mod svg;

/// Harness-level error, split by exit-code class: configuration and IO
/// problems exit with 2, runtime/numerical failures with 1.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or file IO; exit code 2.
    Config(String),
    /// Runtime or numerical failure; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

impl From<mtksmm_core::Error> for CliError {
    fn from(e: mtksmm_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// IO helper: wraps `std::io::Error` with the offending path.
pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}
