use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(
        "dimension mismatch: expected {expected_width}x{expected_height}, got {width}x{height}"
    )]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },

    #[error("buffer of length {len} does not match {width}x{height}")]
    BadBufferLength {
        width: usize,
        height: usize,
        len: usize,
    },

    #[error("binary mask value {value} at index {index} is not 0 or 1")]
    NotBinary { index: usize, value: u8 },

    #[error("label ids are not contiguous: expected id {expected}, found {found}")]
    NonContiguousLabels { expected: u32, found: u32 },

    #[error("unknown instance id {id} (map has {count} instances)")]
    UnknownInstance { id: u32, count: u32 },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("image has a single intensity value {0}; no threshold separates it")]
    ConstantImage(u8),

    #[error("threshold iteration did not converge within {0} steps")]
    NoConvergence(usize),

    #[error("crop size {size} does not fit a {width}x{height} frame")]
    CropTooLarge {
        size: usize,
        width: usize,
        height: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scene too crowded: placed {placed} of {requested} instances")]
    SceneTooCrowded { placed: usize, requested: usize },

    #[error("too many instances for a 16-bit label map: {0}")]
    TooManyInstances(u32),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported maxval {0}")]
    UnsupportedMaxval(u32),

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("manifest error at line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_dims(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            expected_width: expected.0,
            expected_height: expected.1,
            width: actual.0,
            height: actual.1,
        });
    }
    Ok(())
}
