use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("degenerate vertex normal at vertex {0}")]
    DegenerateNormal(usize),

    #[error("non-manifold input: {0}")]
    NonManifoldInput(String),

    #[error("no lattice cell intersects the shell")]
    EmptyShell,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("forward cache is stale (cache version {cache}, parameters version {params})")]
    StaleCache { cache: u64, params: u64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty point set: {0}")]
    EmptySet(&'static str),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("attribute set has no gender")]
    MissingGender,

    #[error("correspondence mismatch: mesh has {mesh} vertices, canonical map has {canonical}")]
    CorrespondenceMismatch { mesh: usize, canonical: usize },

    #[error("render buffers do not belong to this mesh/camera")]
    StaleBuffers,

    #[error("empty mesh: {0}")]
    EmptyMesh(&'static str),

    #[error("optimization diverged at iteration {iteration} ({what})")]
    DivergenceDetected { iteration: usize, what: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
