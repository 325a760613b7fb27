use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image has a zero dimension")]
    ZeroDimension,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown landmark `{0}`")]
    UnknownLandmark(String),
    #[error("duplicate landmark `{0}`")]
    DuplicateLandmark(String),
    #[error("landmark sets do not contain the same names")]
    NameMismatch,
    #[error("landmark {name} at ({x}, {y}) lies outside the {width}x{height} image")]
    PointOutOfBounds {
        name: String,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("need at least 2 cases to split a corpus, got {0}")]
    TooFewCases(usize),
    #[error("tile size {tile} exceeds image size {width}x{height}")]
    TileLargerThanImage {
        tile: usize,
        width: usize,
        height: usize,
    },
    #[error("raster {width}x{height} is smaller than 3x3")]
    ImageTooSmall { width: usize, height: usize },
    #[error("region does not intersect the image")]
    EmptyIntersection,
    #[error("case {case} lacks landmark {name}")]
    MissingLandmark { case: String, name: String },
    #[error("no contour of at least {min_len} px inside the chin region")]
    NoContourFound { min_len: usize },
    #[error("pogonion and menton coincide on the chin contour")]
    DegenerateContour,
    #[error("point ({0}, {1}) is not on the chain")]
    PointNotOnChain(i64, i64),
    #[error("no training crops supplied")]
    EmptyTrainingSet,
    #[error("aligned training crops share no common region")]
    NoOverlap,
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("search region {region:?} is smaller than the {template:?} template")]
    RegionSmallerThanTemplate {
        region: (usize, usize),
        template: (usize, usize),
    },
    #[error("weights must be non-negative, finite and not all zero")]
    InvalidWeights,
    #[error("points defining a line coincide")]
    CoincidentPoints,
    #[error("only {found} edge inliers, need at least {needed}")]
    TooFewEdgePixels { found: usize, needed: usize },
    #[error("all points coincide")]
    AllPointsCoincident,
    #[error("thresholds for {0} are not strictly increasing")]
    NonMonotonicThresholds(String),
    #[error("no cases to evaluate")]
    EmptyEvaluation,
    #[error("no case ids shared between detections and ground truth")]
    NoMatchingCases,
    #[error("case {0} belongs to the training split (pass --allow-train to score it anyway)")]
    TrainCaseInEvaluation(String),
    #[error("invalid parameter {name}: {msg}")]
    InvalidParameter { name: String, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("case {case}: {source}")]
    InCase {
        case: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &str, msg: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            msg: msg.into(),
        }
    }

    /// Wraps the error with the id of the case it came from.
    pub fn in_case(self, case: &str) -> Self {
        match self {
            e @ Error::InCase { .. } => e,
            e => Error::InCase {
                case: case.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// The error without case context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InCase { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code for this error: 1 usage/config, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter { .. } => 1,
            Error::Invariant(_) => 3,
            Error::InCase { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
