// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("invalid value for `{field}`: {msg}")]
    Validation { field: String, msg: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("load at {node} has no path to any bump")]
    Disconnected { node: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("no stamp cached for region ({row}, {col}) with template {template}")]
    StampMissing {
        row: usize,
        col: usize,
        template: usize,
    },

    #[error("pruning removed every template")]
    EmptySet,

    #[error("effective distance needs at least one VDD bump")]
    NoBumps,

    #[error("die holds {cols}x{rows} bump sites, need at least 3x3")]
    DieTooSmall { rows: usize, cols: usize },

    #[error("macro placement failed (seed {seed}): {msg}")]
    PlacementFailure { seed: u64, msg: String },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("incremental and fresh assembly disagree: {0}")]
    IncrementalMismatch(String),

    #[error("bad weight file: {0}")]
    Format(String),

    #[error("shape mismatch in layer `{layer}`: {msg}")]
    Shape { layer: String, msg: String },

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("division domain: {0}")]
    DivisionDomain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}
