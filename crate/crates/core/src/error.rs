use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box: width {w} and height {h} must be positive and finite")]
    InvalidBox { w: f64, h: f64 },

    #[error("embedding length mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("embedding is not unit-norm (norm {norm})")]
    NotNormalized { norm: f64 },

    #[error("detection {index} has no embedding but identity weight is {w2}")]
    MissingEmbedding { index: usize, w2: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix dimension {0} exceeds brute-force cap of 9")]
    BruteForceTooLarge(usize),

    #[error("frame {got} does not follow current frame {current}")]
    FrameRegression { current: u32, got: u32 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
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

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
