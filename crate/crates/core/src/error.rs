use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("buffer of length {len} does not match {width}x{height}")]
    BufferSize { width: usize, height: usize, len: usize },

    #[error("empty segment")]
    EmptySegment,

    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("category table is empty")]
    EmptyCategoryTable,

    #[error("invalid category table: {0}")]
    InvalidCategoryTable(String),

    #[error("segment {id} has category {category} which is not in the category table")]
    UnknownCategory { id: u32, category: u32 },

    #[error("class {0} has no pixels in the batch")]
    ClassAbsent(u32),

    #[error("vector length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("at least {required} items are required, got {actual}")]
    TooFewItems { required: usize, actual: usize },

    #[error("invalid distance matrix: {0}")]
    InvalidDistanceMatrix(String),

    #[error("malformed tensor file: {0}")]
    MalformedTensor(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("every pixel in the batch is ignored")]
    AllIgnored,

    #[error("contrastive sample needs at least two labeled classes, found {0}")]
    TooFewClasses(usize),

    #[error("contrastive sample has no positive pairs")]
    NoPositivePairs,

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("unachievable target IoU {target:.3} for object {object} (best {best:.3})")]
    UnachievableIou { object: usize, target: f64, best: f64 },

    #[error("invalid scene spec: {0}")]
    InvalidSceneSpec(String),

    #[error("manifest: duplicate frame id {0:?}")]
    DuplicateFrameId(String),

    #[error("manifest: frame {frame:?} references missing file {path}")]
    MissingFile { frame: String, path: PathBuf },

    #[error("manifest: frame {frame:?} has invalid split {split:?} (expected train or test)")]
    InvalidSplit { frame: String, split: String },

    #[error("manifest: frame {frame:?} is missing {what}")]
    MissingField { frame: String, what: String },

    #[error("manifest schema: {0}")]
    Schema(String),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
