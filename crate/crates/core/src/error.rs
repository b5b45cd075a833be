use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("duplicate attribute id `{0}`")]
    DuplicateAttribute(String),

    #[error("unknown attribute category `{0}`")]
    UnknownCategory(String),

    #[error("schema contains no attributes")]
    EmptySchema,

    #[error("unknown attribute id `{0}`")]
    UnknownAttribute(String),

    #[error("duplicate image id `{0}`")]
    DuplicateImage(String),

    #[error("record `{id}`: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },

    #[error("region ({x}, {y}, {width}, {height}) lies outside the {raster_width}x{raster_height} raster")]
    RegionOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
        raster_width: u32,
        raster_height: u32,
    },

    #[error("part {part}: {source}")]
    Part {
        part: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("histogram entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need {needed} distinct descriptors for k-means, found {found}")]
    TooFewDescriptors { needed: usize, found: usize },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("gram matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("insufficient examples: {0}")]
    InsufficientExamples(String),

    #[error("margins are constant; calibration is undefined")]
    DegenerateMargins,

    #[error("codebook fingerprint mismatch: model has {expected}, features have {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("exact inference supports at most {max} nodes, got {n}")]
    TooManyNodes { n: usize, max: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("unsupported file format: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_part(part: &'static str, source: Error) -> Self {
        Error::Part {
            part,
            source: Box::new(source),
        }
    }
}
