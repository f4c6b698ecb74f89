use std::path::Path;

use crate::battery_data::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("cell {cell_id} is invalid: {}", join_violations(.violations))]
    InvalidCell { cell_id: String, violations: Vec<Violation> },

    #[error("cell {cell_id} not found in {dir}")]
    MissingCell { cell_id: String, dir: String },

    #[error("csv parse error: {0}")]
    Csv(String),

    #[error("unknown data source {name:?}; known sources: {}", .known.join(", "))]
    UnknownSource { name: String, known: Vec<String> },

    #[error("download of {source_name} failed: {message} (manifest written to {manifest})")]
    Download { source_name: String, message: String, manifest: String },

    #[error("invalid split: {0}")]
    Split(String),

    #[error("end-of-life threshold {threshold}% never reached")]
    NotReached { threshold: f64 },

    #[error("label error: {0}")]
    Label(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("transform error: {0}")]
    Transform(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("unknown {kind} {name:?}; registered: {}", .registered.join(", "))]
    UnknownComponent { kind: &'static str, name: String, registered: Vec<String> },

    #[error("{kind} {name:?} is already registered")]
    DuplicateComponent { kind: &'static str, name: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid specification: {0}")]
    Spec(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.display().to_string(), source }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
