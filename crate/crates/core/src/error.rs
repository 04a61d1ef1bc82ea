use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: String,
        expected: u32,
    },

    #[error("backward rule {rule} cannot be applied to a {layer} layer")]
    Rule { rule: &'static str, layer: &'static str },

    #[error("model has no convolutional layer to explain")]
    NoConvLayer,

    #[error("attribution map has no strictly positive score")]
    EmptyPositiveSet,

    #[error("class score {0} is not above the stabilizer")]
    DegenerateScore(f64),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("ordering index undefined: {0}")]
    Undefined(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
