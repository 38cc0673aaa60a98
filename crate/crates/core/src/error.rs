use thiserror::Error;

/// Errors raised by the registration solvers and the data model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch in frame {frame}: expected {expected} columns, found {found}")]
    FrameDimensionMismatch {
        frame: usize,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("frame index {index} out of range (1..={frames})")]
    FrameOutOfRange { index: usize, frames: usize },

    #[error("column index {index} out of range for {cols} columns")]
    ColumnOutOfRange { index: usize, cols: usize },

    #[error("support set indices must be strictly increasing")]
    UnsortedSupport,

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid rigid motion: {0}")]
    InvalidMotion(String),

    #[error("invalid shape basis: rows are not orthonormal (deviation {0:.3e})")]
    InvalidBasis(f64),

    #[error("singular value decomposition failed to converge")]
    SvdFailed,

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("matrix completion is ill-posed: {0}")]
    IllPosedCompletion(String),

    #[error(
        "initialization failed: only {inliers} inlier features survive (need at least {required})"
    )]
    InitializationFailed { inliers: usize, required: usize },

    #[error(
        "insufficient inliers for registration: {found} usable features (need at least {required})"
    )]
    InsufficientInliers { found: usize, required: usize },

    #[error("frame {frame}: {source}")]
    AtFrame { frame: usize, source: Box<Error> },

    #[error("no consensus set of at least {required} features found (best was {best})")]
    NoConsensus { best: usize, required: usize },
}

impl Error {
    /// Attaches a frame index to a solver error.
    pub fn at_frame(self, frame: usize) -> Error {
        match self {
            e @ Error::AtFrame { .. } => e,
            e => Error::AtFrame {
                frame,
                source: Box::new(e),
            },
        }
    }

    /// The error without any frame context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtFrame { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
