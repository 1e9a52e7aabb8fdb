use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate footprint for gaussian {0}")]
    DegenerateFootprint(usize),

    #[error("empty mask")]
    EmptyMask,

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("decomposition failed: no clusters and no attachable masks")]
    DecompositionFailed,

    #[error("degenerate global feature for object {0}")]
    DegenerateGlobalFeature(usize),

    #[error("object {0} has no aspects")]
    NoAspects(usize),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error("no encoder configured; set VIEWAGG_EMBED_URL or query by name")]
    NoEncoder,

    #[error("embedding service error: {0}")]
    Encoder(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("version mismatch in {path}: expected {expected}, found {found}")]
    VersionMismatch {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("manifest references missing mask ids: {0:?}")]
    MissingMasks(Vec<u32>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateFootprint(_) => "degenerate_footprint",
            Error::EmptyMask => "empty_mask",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::DecompositionFailed => "decomposition_failed",
            Error::DegenerateGlobalFeature(_) => "degenerate_global_feature",
            Error::NoAspects(_) => "no_aspects",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NoEncoder => "no_encoder",
            Error::Encoder(_) => "encoder",
            Error::Malformed { .. } => "malformed_file",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::MissingMasks(_) => "missing_masks",
            Error::Io { .. } => "io",
        }
    }
}
