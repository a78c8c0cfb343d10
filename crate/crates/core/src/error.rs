use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("inconsistent plane shapes")]
    InconsistentPlaneShapes,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("expected {expected} channels, got {actual}")]
    ChannelCount { expected: usize, actual: usize },
    #[error("class id out of range: {0}")]
    ClassIdOutOfRange(u64),
    #[error("bad npy magic")]
    BadMagic,
    #[error("unsupported npy version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("Fortran order unsupported")]
    FortranOrder,
    #[error("malformed npy header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("sample count mismatch: {images} images vs {labels} labels")]
    SampleCountMismatch { images: usize, labels: usize },
    #[error("index {index} out of bounds for {len} samples")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("plane smaller than one tile per axis")]
    PlaneSmallerThanTile,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bad aperture {0}")]
    BadAperture(usize),
    #[error("objective diverged")]
    ObjectiveDiverged,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("io error: {0}")]
    Io(String),
    #[error("sample {index}: {source}")]
    InSample { index: usize, source: Box<Error> },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
