use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid hyper-parameter: {0}")]
    InvalidHyperparameter(String),

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("class {class} has {available} examples, {needed} required")]
    InsufficientExamples {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("non-finite value while evaluating sample {index}: {what}")]
    Diagnostic { index: usize, what: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while parsing IDX (MNIST-format) files.
#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("bad magic number in {file}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        file: String,
        expected: u32,
        found: u32,
    },
    #[error("truncated {file}: needed {needed} bytes, found {found}")]
    Truncated {
        file: String,
        needed: usize,
        found: usize,
    },
    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },
}

/// Failures while reading a `key = value` config file.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("invalid value for `{key}`: {message}")]
    InvalidValue { key: String, message: String },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("malformed line {line}: `{text}`")]
    Malformed { line: usize, text: String },
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::InvalidValue { key, .. }
            | ConfigError::MissingKey { key } => Some(key),
            ConfigError::Malformed { .. } => None,
        }
    }
}
