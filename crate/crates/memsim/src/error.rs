use std::path::PathBuf;

/// Errors surfaced by the simulator and experiment harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("crossbar dimensions must be at least 1x1, got {rows}x{cols}")]
    ZeroDimension { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("programming voltage must be nonzero")]
    ZeroVoltage,

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("{path}: bad IDX magic {got:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        got: u32,
        expected: u32,
    },

    #[error("{path}: truncated IDX file ({context})")]
    Truncated { path: PathBuf, context: String },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("unknown config key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },

    #[error("snapshot parse error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
