use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{what}: index {index} out of range for length {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("bag is empty (M = 0)")]
    EmptyBag,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("not a probability distribution: {0}")]
    Distribution(String),

    #[error("[CLS] rollout row has zero mass over the bag")]
    ZeroMass,

    #[error("attention trace invalid: {0}")]
    Trace(String),

    #[error("trainable parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::ZeroMass)
    }
}
