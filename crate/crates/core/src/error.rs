//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {what}: {message}")]
    Parse { what: String, message: String },

    #[error("invalid feeder: {0}")]
    Feeder(String),

    #[error("duplicate slack: buses {first} and {second} are both marked slack")]
    DuplicateSlack { first: usize, second: usize },

    #[error("device on absent phase: {device} references bus {bus} phase {phase}, which is not present")]
    DeviceOnAbsentPhase {
        device: String,
        bus: usize,
        phase: char,
    },

    #[error("disconnected feeder: bus {bus} is not reachable from the slack bus")]
    Disconnected { bus: usize },

    #[error("singular matrix: zero pivot at non-slack node-phase index {index}")]
    Singular { index: usize },

    #[error("voltage collapse at node-phase {index}: |V| = {magnitude:.4} p.u. at iteration {iteration}")]
    VoltageCollapse {
        index: usize,
        magnitude: f64,
        iteration: usize,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data generation aborted: {discarded} of {attempted} power-flow draws failed to converge")]
    GenerationFailed { discarded: usize, attempted: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }

    /// Short category label used for CLI exit diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Feeder(_)
            | Error::DuplicateSlack { .. }
            | Error::DeviceOnAbsentPhase { .. }
            | Error::Disconnected { .. } => "feeder",
            Error::Singular { .. } | Error::VoltageCollapse { .. } => "numerics",
            Error::Dimension { .. } => "dimension",
            Error::NonFinite(_) | Error::Divergence { .. } => "training",
            Error::Checkpoint(_) => "checkpoint",
            Error::GenerationFailed { .. } => "data",
            Error::Config(_) => "config",
        }
    }
}
