use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty track")]
    EmptyTrack,

    #[error("invalid window")]
    InvalidWindow,

    #[error("no voiced frames for SNR reference")]
    NoVoicedFrames,

    /// An F0 track violated one of its invariants.
    #[error("{field}: {message}")]
    InvalidTrack { field: String, message: String },

    #[error("invalid {name}: {message}")]
    InvalidConfig { name: &'static str, message: String },

    #[error("empty pool")]
    EmptyPool,

    #[error("no opposite-gender candidates")]
    NoOppositeGender,

    #[error("pool too small: need {needed} entries, have {available}")]
    PoolTooSmall { needed: usize, available: usize },

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate embedding key {0:?}")]
    DuplicateKey(String),

    #[error("unresolved id {0:?}")]
    UnresolvedId(String),

    #[error("empty score set")]
    EmptyScores,

    #[error("eer_percent {0} outside [0, 100]")]
    EerOutOfRange(f64),

    #[error("generator failed: {0}")]
    Generator(String),

    /// Malformed input data; `location` names the line, row or field.
    #[error("{location}: {message}")]
    Parse { location: String, message: String },

    #[error("wav: {0}")]
    Wav(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
