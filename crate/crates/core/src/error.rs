use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate affine transform (determinant {det:.3e}) in {context}")]
    DegenerateAffine { det: f64, context: String },

    #[error("unreadable font `{font}`: {reason}")]
    Font { font: String, reason: String },

    #[error("font `{font}` has no glyph for {glyph:?}")]
    MissingGlyph { font: String, glyph: char },

    #[error("glyph {0:?} is not in the atlas")]
    UnknownGlyph(char),

    #[error("font index {index} out of range (atlas has {count} fonts)")]
    UnknownFont { index: usize, count: usize },

    #[error("atlas format error: {0}")]
    AtlasFormat(String),

    #[error("effect not observable: no pixel has alpha above {threshold}")]
    NotObservable { threshold: f32 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("document schema error at `{field}`: {reason}")]
    Schema { field: String, reason: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("i/o error on {path}: {source}")]
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
}
