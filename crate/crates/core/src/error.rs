//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::optim::OptimizationTrace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid PGM header: {detail}")]
    PgmHeader { path: PathBuf, detail: String },

    #[error("{path}: expected {expected} samples, found {found}")]
    PgmPixelCount {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: sample value {value} exceeds maxval {maxval}")]
    PgmSampleRange {
        path: PathBuf,
        value: u32,
        maxval: u32,
    },

    #[error("pixel value {value} outside [0, 1]")]
    PixelOutOfRange { value: f64 },

    #[error("maxval must be 255 or 65535, got {0}")]
    InvalidMaxval(u16),

    #[error(
        "dimension mismatch: {expected_width}x{expected_height} vs {found_width}x{found_height}"
    )]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        found_width: usize,
        found_height: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("autocorrelation lag list is empty")]
    EmptyLags,

    #[error("autocorrelation lag (0, 0) is not allowed")]
    ZeroLag,

    #[error("lag ({row}, {col}) out of range for {height}x{width} grid")]
    LagOutOfRange {
        row: i32,
        col: i32,
        height: usize,
        width: usize,
    },

    #[error("block size {block} yields {blocks} complete blocks, at least 2 required")]
    TooFewBlocks { block: usize, blocks: usize },

    #[error("grid must be at least 3x3 for noise estimation, got {width}x{height}")]
    GridTooSmall { width: usize, height: usize },

    #[error("image of {width}x{height} too small for a {window}-wide window")]
    WindowTooLarge {
        window: usize,
        width: usize,
        height: usize,
    },

    #[error("score lists have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("paired differences have zero variance, t statistic undefined")]
    DegenerateDifferences,

    #[error("non-finite {term} term")]
    NonFiniteTerm { term: &'static str },

    /// Optimization abort: the partial trace is carried so callers can
    /// still inspect the loss history up to the failing iteration.
    #[error("non-finite {term} term at iteration {iteration}")]
    OptimizationAborted {
        term: &'static str,
        iteration: usize,
        trace: Box<OptimizationTrace>,
    },

    #[error("empty corpus: no input images found")]
    EmptyCorpus,

    #[error("duplicate method name {0:?} in benchmark config")]
    DuplicateMethodName(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected_width: expected.0,
            expected_height: expected.1,
            found_width: found.0,
            found_height: found.1,
        }
    }
}
