use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("point lands behind the target camera (z = {0})")]
    BehindCamera(f64),
    #[error("intrinsics need positive focal lengths and a principal point inside the image")]
    InvalidIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("scene has no primitive with id {0}")]
    UnknownPrimitive(u32),
    #[error("view index {index} out of range for {len} views")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifierError {
    #[error("rig has {rig} views but {views} were supplied")]
    RigMismatch { rig: usize, views: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("need at least two views, got {0}")]
    TooFewViews(usize),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite gradient at iteration {iteration} (coordinate {index})")]
    NonFiniteGradient { iteration: usize, index: usize },
    #[error("invalid trainer config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

/// Errors surfaced by the experiment commands.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no checkpoint found at {0}")]
    MissingCheckpoint(PathBuf),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Scene(SceneError::BadConfig(_)) => 1,
            Error::Train(TrainError::BadConfig(_)) => 1,
            _ => 2,
        }
    }
}
