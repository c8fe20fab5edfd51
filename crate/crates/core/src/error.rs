//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rank-deficient system: {deficient} of {dim} dimensions are not identifiable")]
    RankDeficient { deficient: usize, dim: usize },

    #[error("protocol mismatch: expected fingerprint {expected}, found {found}")]
    ProtocolMismatch { expected: String, found: String },

    #[error(
        "target b-value {target_b} exceeds the training maximum {max_train_b} ({frames} frame(s)); \
         pass --allow-extrapolation to override"
    )]
    Extrapolation {
        target_b: f64,
        max_train_b: f64,
        frames: usize,
    },

    #[error("non-finite values at frame(s) {0:?}")]
    NonFinite(Vec<usize>),

    #[error("unidentifiable tensor: design has rank {rank} < 7")]
    UnidentifiableTensor { rank: usize },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch { what: String, left: usize, right: usize },

    #[error("parse error at line {line}, column {column}: cannot read {token:?} as a number")]
    Parse { line: usize, column: usize, token: String },

    #[error("frame {frame} has b = {b} but a zero gradient direction")]
    ZeroDirection { frame: usize, b: f64 },

    #[error("frame {frame} has a direction of norm {norm}, too far from unit length")]
    NonUnitDirection { frame: usize, norm: f64 },

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDtype(i16),

    #[error("bad NIfTI magic {0:?} (expected \"n+1\")")]
    BadMagic([u8; 4]),

    #[error("bad NIfTI header size {0} (expected 348 in either byte order)")]
    BadHeaderSize(i32),

    #[error("truncated NIfTI data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unknown batch label {0:?}")]
    UnknownBatch(String),

    #[error("invalid fit artifact: {0}")]
    Artifact(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("stage {stage} failed for {dataset}: {source}")]
    Stage {
        stage: &'static str,
        dataset: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by reading or writing files, as opposed to bad
    /// content or internal problems.
    pub fn is_io(&self) -> bool {
        match self {
            Error::File { .. } | Error::Io(_) => true,
            Error::Stage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
