use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (camera-space z = {z})")]
    PointBehindCamera { z: f64 },
    #[error("depth must be positive, got {depth}")]
    NonPositiveDepth { depth: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidRotation,

    #[error("posture has {posture} joints but skeleton has {skeleton}")]
    JointCountMismatch { skeleton: usize, posture: usize },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid character: {0}")]
    InvalidCharacter(String),
    #[error("malformed data table {table} line {line}: {reason}")]
    Table {
        table: &'static str,
        line: usize,
        reason: String,
    },

    #[error("{0} pool is empty")]
    EmptyPool(&'static str),
    #[error("invalid stage {0:?} (expected easy, inter or hard)")]
    InvalidStage(String),
    #[error("invalid split {0:?} (expected train, validation or test)")]
    InvalidSplit(String),
    #[error("io failure: {0}")]
    Io(#[from] io::Error),
    #[error("malformed container: {0}")]
    Format(String),

    #[error("depth frame has no foreground pixels")]
    EmptyForeground,
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("no views to fuse")]
    NoViews,
    #[error("no foreground points survived fusion")]
    NoForegroundPoints,

    #[error("normal equations are singular (ridge lambda = {lambda})")]
    SingularSystem { lambda: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid smoothing weights: {0}")]
    InvalidSmoothing(String),

    #[error("count mismatch: {predictions} predictions vs {groundtruth} groundtruth")]
    CountMismatch {
        predictions: usize,
        groundtruth: usize,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
