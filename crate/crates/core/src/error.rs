use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The constraint set is empty (for example `s * t < 1`).
    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    /// An argument outside the operation's domain (NaN input, `s > n`, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("idx: bad magic number in {file}: expected {expected}, found {found}")]
    IdxMagic { file: String, expected: u32, found: u32 },

    #[error("idx: {file} is truncated (need {needed} bytes, have {actual})")]
    IdxTruncated { file: String, needed: usize, actual: usize },

    #[error("idx: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
