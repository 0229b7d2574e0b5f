use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: left is {lhs}, right is {rhs}")]
    DimMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },

    #[error("matrix is rank deficient at column {col} (|r[{col},{col}]| = {value:.3e} below threshold {threshold:.3e})")]
    RankDeficient {
        col: usize,
        value: f64,
        threshold: f64,
    },

    #[error("orthonormal columns require d_out <= d_in, got d_in = {d_in}, d_out = {d_out}")]
    OrthogonalShape { d_in: usize, d_out: usize },

    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    ZeroDim { rows: usize, cols: usize },

    #[error("data length {len} does not match {rows}x{cols}")]
    BadDataLen { len: usize, rows: usize, cols: usize },

    #[error("non-finite value in {what}{}", at.map(|i| format!(" at index {i}")).unwrap_or_default())]
    NonFinite { what: String, at: Option<usize> },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("unknown architecture '{0}'")]
    UnknownArchitecture(String),

    #[error("class index {index} out of range for {n_classes} classes")]
    ClassOutOfRange { index: usize, n_classes: usize },

    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("target variance is zero; r2 undefined")]
    ZeroTargetVariance,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("learning-rate sweep diverged immediately; try a smaller lr_min (first loss {first_loss}, smoothed {smoothed})")]
    SweepDiverged { first_loss: f64, smoothed: f64 },

    #[error("training produced a non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("idx file {path}: {kind}")]
    Idx { path: String, kind: IdxErrorKind },

    #[error("checksum mismatch for regenerated projection: stored {stored:#018x}, regenerated {regenerated:#018x}")]
    ChecksumMismatch { stored: u64, regenerated: u64 },

    #[error("projection descriptor dims ({d_in}, {d_out}) do not match stored metadata ({meta_in}, {meta_out})")]
    DescriptorDims {
        d_in: usize,
        d_out: usize,
        meta_in: usize,
        meta_out: usize,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum IdxErrorKind {
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("file truncated: expected {expected} bytes of payload, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
