use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("trailing data: expected {expected} bytes, found {found}")]
    TrailingData { expected: u64, found: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("non-finite or out-of-range value: {0}")]
    NonFiniteValue(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("experience is empty")]
    EmptyExperience,
    #[error("feature set is empty")]
    EmptySet,
    #[error("neuron count mismatch: expected {expected}, found {found}")]
    NeuronCountMismatch { expected: usize, found: usize },
    #[error("histogram edges do not match")]
    EdgeMismatch,
    #[error("need at least 2 images to fit a gaussian, found {0}")]
    TooFewImages(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("symmetric eigendecomposition failed to converge")]
    EigenFailure,
    #[error("too many candidates for exact enumeration: {0} (max {max})", max = crate::baselines::MAX_EXACT_CANDIDATES)]
    TooManyCandidates(usize),
    #[error("need at least {needed} experiences, found {found}")]
    TooFewExperiences { needed: usize, found: usize },
    #[error("experience sets differ: {0}")]
    SetMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("pose variant does not match the ground-truth matcher")]
    PoseVariantMismatch,
    #[error("no pose for {0}")]
    MissingPose(String),
    #[error("incompatible feature set: {0}")]
    IncompatibleFeatureSet(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Csv(e) if e.is_io_error() => ErrorClass::Io,
            Error::EigenFailure => ErrorClass::Numerical,
            _ => ErrorClass::Validation,
        }
    }
}
