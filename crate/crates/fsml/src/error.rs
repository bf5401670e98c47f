//! Crate-wide error type.
//!
//! Every fallible operation returns [`FsmlError`]. Recoverable oddities
//! (zero-distance duplicates, ridge engagement, rank-deficient transport
//! overlaps) are reported through the `log` facade instead of failing.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, FsmlError>;

/// Errors raised by curve handling, geometry, embedding, tuning and the
/// end-to-end pipeline.
#[derive(Debug, Error)]
pub enum FsmlError {
    /// Two curves that must share an evaluation grid do not.
    #[error("curves are defined on different evaluation grids")]
    GridMismatch,

    /// A caller-supplied parameter is out of its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Every kernel weight vanished at a grid point (bandwidth far too
    /// small for the observation design).
    #[error("degenerate fit at grid point t = {grid_point}: all kernel weights are zero")]
    DegenerateFit { grid_point: f64 },

    /// Not enough observations or samples to run the requested estimator.
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// A query curve lies so far outside the training support that all
    /// interpolation weights underflow.
    #[error(
        "query outside the training support: nearest training curve is at L2 distance {nearest}"
    )]
    Extrapolation { nearest: f64 },

    /// An object was used in a state that does not support the operation
    /// (e.g. predicting with an empty training set).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Cross-validation folds could not be constructed.
    #[error("fold construction failed: {0}")]
    FoldConstruction(String),

    /// Underlying file-system failure while reading or writing artifacts.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed CSV/manifest content.
    #[error("parse error: {0}")]
    Parse(String),

    /// A model bundle lacks a required section.
    #[error("model bundle is missing required section `{0}`")]
    MissingSection(String),

    /// A model bundle was written by an unsupported format version.
    #[error("model bundle format version {found} is not supported (this build reads version {expected})")]
    IncompatibleVersion { found: String, expected: u32 },

    /// A pipeline stage failed; wraps the underlying error with the stage
    /// name so CLI users can tell where a fit went wrong.
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<FsmlError>,
    },
}

impl FsmlError {
    /// Wraps `self` with the name of the pipeline stage that raised it.
    /// Stage wrappers do not nest: re-annotating keeps the innermost stage.
    pub(crate) fn in_stage(self, stage: &'static str) -> FsmlError {
        match self {
            e @ FsmlError::Stage { .. } => e,
            e => FsmlError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> FsmlError {
        FsmlError::InvalidParameter(msg.into())
    }
}
