use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{0}` is already registered")]
    DuplicateParam(String),
    #[error("parameter `{name}` has a zero extent in shape {shape:?}")]
    ZeroExtent { name: String, shape: Vec<usize> },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("relative laplacian mode requires captured initial differentials")]
    MissingInitialDifferentials,
    #[error("mesh has no bones")]
    NoBones,
    #[error("frame {frame} out of range ({count} frames)")]
    FrameOutOfRange { frame: usize, count: usize },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite radiance at pixel ({x}, {y})")]
    NonFiniteRadiance { x: usize, y: usize },
    #[error("negative input to {0}")]
    NegativeInput(&'static str),
    #[error("initial laplacian loss is zero; a lambda override is required")]
    ZeroLaplacian,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("reference error: {0}")]
    Reference(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
