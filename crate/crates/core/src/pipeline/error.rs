use std::io;

use thiserror::Error;

use crate::attribute_map::MapError;
use crate::codebook::CodebookError;
use crate::encoder::EncodeError;
use crate::laf::LafError;
use crate::regression::RegressionError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid split: {split} training frames of {frames}")]
    InvalidSplit { split: usize, frames: usize },
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("inconsistent dimensions: {0}")]
    InconsistentDims(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("test split is empty")]
    EmptyTestSplit,
    #[error("frame {index}: {source}")]
    Frame {
        index: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Laf(#[from] LafError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Data,
    Numeric,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Config => 2,
            FailureKind::Data => 3,
            FailureKind::Numeric => 4,
        }
    }
}

impl PipelineError {
    pub fn kind(&self) -> FailureKind {
        match self {
            PipelineError::Config(_) | PipelineError::InvalidSplit { .. } => FailureKind::Config,
            PipelineError::Encode(
                EncodeError::InvalidKappa { .. } | EncodeError::InvalidBeta(_),
            ) => FailureKind::Config,
            PipelineError::Codebook(
                CodebookError::InvalidTarget(_) | CodebookError::InvalidParameter(_),
            ) => FailureKind::Config,
            PipelineError::Laf(LafError::InvalidGrid(_)) => FailureKind::Config,
            PipelineError::Codebook(_)
            | PipelineError::Encode(_)
            | PipelineError::Regression(_) => FailureKind::Numeric,
            PipelineError::Frame { source, .. } => source.kind(),
            _ => FailureKind::Data,
        }
    }

    pub(crate) fn at_frame(self, index: usize) -> Self {
        PipelineError::Frame {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
