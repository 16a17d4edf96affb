use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("weight file: bad magic {found:02x?}, expected \"CGWT\"")]
    BadMagic { found: [u8; 4] },

    #[error("weight file: unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("weight file truncated while reading {0}")]
    Truncated(String),

    #[error("weight file: tensor `{name}` has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight file: missing tensor `{0}`")]
    MissingTensor(String),

    #[error("weight file: unexpected tensor `{0}`")]
    UnexpectedTensor(String),

    #[error("weight file: {0}")]
    Format(String),

    #[error("non-finite value at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("degenerate feature matrix: {0}")]
    Degenerate(String),

    #[error("missing decoder for level {0}")]
    MissingDecoder(String),

    #[error("image too small: {0}")]
    Undersized(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
