use std::path::PathBuf;

use memlab_core::MemError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] MemError),
}

impl CliError {
    pub fn choice(field: &str, got: &str, choices: &[&str]) -> Self {
        CliError::Config(format!(
            "field `{field}`: unknown value `{got}`; valid choices: {}",
            choices.join(", ")
        ))
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Process exit status for the runner.
pub mod exit {
    pub const OK: i32 = 0;
    /// Any error: config, I/O, or a failed computation.
    pub const ERROR: i32 = 1;
    /// An equivalence run completed but its assertion failed.
    pub const ASSERTION: i32 = 2;
}
