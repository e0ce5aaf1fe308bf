use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("variable index {index} is not bound (assignment has {len} values)")]
    UnboundVariable { index: usize, len: usize },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("division by zero at node {node}")]
    DivisionByZero { node: usize },

    #[error("enclosure of node {node} is not finite")]
    NonFiniteEnclosure { node: usize },

    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("unsupported system: {0}")]
    UnsupportedSystem(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("time {t} outside horizon [{t0}, {t1}]")]
    OutsideHorizon { t: f64, t0: f64, t1: f64 },

    #[error("point outside the spatial domain")]
    OutsideDomain,

    #[error("CFL condition violated: time step {dt} exceeds the stable step {required}")]
    Cfl { dt: f64, required: f64 },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
