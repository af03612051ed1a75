use std::io;
use std::path::PathBuf;

use serde_json::json;

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Compute(#[from] dfm_core::DfmError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("replay of {output} produced different bytes")]
    ReplayMismatch { output: String },

    #[error("thread pool: {0}")]
    Threads(String),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Compute(_) => "compute",
            CliError::Io { .. } => "io",
            CliError::Manifest { .. } => "manifest",
            CliError::ReplayMismatch { .. } => "replay-mismatch",
            CliError::Threads(_) => "threads",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Manifest { .. } => 5,
            CliError::ReplayMismatch { .. } => 6,
            CliError::Threads(_) => 7,
        }
    }

    /// Single-line JSON description for stderr.
    pub fn json_line(&self) -> String {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Config(c) = self {
            v["field"] = json!(c.field);
            v["line"] = json!(c.line);
        }
        v.to_string()
    }
}
