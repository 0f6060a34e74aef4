use serde_json::json;
use thiserror::Error;

use crate::config::Violation;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration ({} violation{})", .0.len(), if .0.len() == 1 { "" } else { "s" })]
    Config(Vec<Violation>),

    #[error(transparent)]
    Sim(twomode::Error),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("output differs between two identical runs: {0}")]
    Nondeterministic(String),

    #[error("oracle check failed: {0}")]
    Oracle(String),
}

impl From<twomode::Error> for CliError {
    fn from(e: twomode::Error) -> Self {
        CliError::Sim(e)
    }
}

impl CliError {
    /// Numerical failures exit 3; inputs the engine rejects count as config errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Sim(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Sim(_) => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Nondeterministic(_) | CliError::Oracle(_) => EXIT_NUMERICAL,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Sim(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Nondeterministic(_) => "nondeterministic",
            CliError::Oracle(_) => "oracle",
        }
    }

    /// One-line JSON record for machine consumers.
    pub fn record(&self) -> String {
        let mut r = json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Config(v) => r["violations"] = json!(v),
            CliError::Sim(twomode::Error::Convergence { time, history, .. } | twomode::Error::Diverged { time, history, .. }) => {
                r["time"] = json!(time);
                r["history"] = json!(history);
            }
            _ => {}
        }
        r.to_string()
    }
}
