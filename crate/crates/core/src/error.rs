use std::path::PathBuf;

use dummynet_nn::checkpoint::CheckpointError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),
    #[error("pose cluster has {found} members, at least {required} are required")]
    TooFewMembers { found: usize, required: usize },
    #[error("input is {found:?}, model expects {expected:?}")]
    ResolutionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("convex hull needs three non-collinear visible keypoints")]
    DegenerateHull,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),
    #[error("non-finite loss component {0}")]
    NonFiniteLoss(&'static str),
    #[error("height model needs at least two samples with distinct y")]
    DegenerateFit,
    #[error("no valid placement after {attempts} attempts")]
    NoValidPlacement { attempts: usize },
    #[error("inserted person does not fit inside the scene")]
    OutOfBounds,
    #[error("patch mask has no foreground pixels")]
    EmptyMask,
    #[error("need at least one positive and one negative sample")]
    NoSamples,
    #[error("no ground-truth boxes")]
    NoGroundTruth,
    #[error("invalid value: {0}")]
    InvalidInput(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
