//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by parsing, assembly, and the numeric engines.
#[derive(Debug, Error)]
pub enum Error {
    /// Netlist syntax or validation failure, with the 1-based source line.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A structurally invalid grid (no supply pin, dangling node, ...).
    #[error("invalid grid: {0}")]
    Grid(String),

    /// Bad mesh-generator parameters.
    #[error("invalid mesh spec: {0}")]
    Mesh(String),

    /// Chaos-basis construction failure (dimension/order out of range).
    #[error("invalid chaos basis: {0}")]
    Basis(String),

    /// Mismatched dimensions between cooperating objects.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The factorization hit a non-positive pivot (floating node, bad step).
    #[error("singular matrix: {0}")]
    Singular(String),

    /// An engine was invoked outside its supported configuration.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
