use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can surface.
#[derive(Debug, Error)]
pub enum ScdaError {
    #[error("bag `{0}` has no patches")]
    EmptyBag(String),
    #[error("non-finite value in {0}")]
    NonFiniteInput(String),
    #[error("vector norm below 1e-12")]
    ZeroVector,
    #[error("empty (class, center) cell: class {class}, center {center}")]
    EmptyCell { class: String, center: String },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    DegenerateFraction(f64),
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionMismatch(u32),
    #[error("truncated file: expected {expected} bytes of payload, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("row {row} has norm {norm}, expected unit norm")]
    UnnormalizedInput { row: usize, norm: f64 },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("batch needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("infeasible batch spec: {0}")]
    InfeasibleSpec(String),
    #[error("bad dimension: {0}")]
    BadDimension(String),
    #[error("row {0} collapsed to zero before normalization")]
    ZeroOutput(usize),
    #[error("loss became non-finite at step {0}")]
    DivergenceDetected(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("only {found} tissue pixels, need at least {needed}")]
    NotEnoughTissue { found: usize, needed: usize },
    #[error("stain vectors are within {0:.3} degrees of parallel")]
    DegenerateStains(f64),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("cannot place {n_classes} class means at separation {separation} in {dim} dimensions")]
    InfeasibleSeparation { n_classes: usize, dim: usize, separation: f64 },
    #[error("not enough shots: class {class} has {available} held-out training slides, need {needed}")]
    NotEnoughShots { class: usize, available: usize, needed: usize },
    #[error("covariance has fewer than 2 nonzero eigenvalues")]
    RankDeficient,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = ScdaError> = std::result::Result<T, E>;

impl ScdaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ScdaError::Io { path: path.into(), source }
    }

    /// Short stable identifier, used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            ScdaError::EmptyBag(_) => "EmptyBag",
            ScdaError::NonFiniteInput(_) => "NonFiniteInput",
            ScdaError::ZeroVector => "ZeroVector",
            ScdaError::EmptyCell { .. } => "EmptyCell",
            ScdaError::DegenerateFraction(_) => "DegenerateFraction",
            ScdaError::BadMagic { .. } => "BadMagic",
            ScdaError::VersionMismatch(_) => "VersionMismatch",
            ScdaError::TruncatedFile { .. } => "TruncatedFile",
            ScdaError::DimensionMismatch { .. } => "DimensionMismatch",
            ScdaError::ShapeMismatch(_) => "ShapeMismatch",
            ScdaError::InvalidManifest(_) => "InvalidManifest",
            ScdaError::UnnormalizedInput { .. } => "UnnormalizedInput",
            ScdaError::NonPositiveTemperature(_) => "NonPositiveTemperature",
            ScdaError::BatchTooSmall(_) => "BatchTooSmall",
            ScdaError::InfeasibleSpec(_) => "InfeasibleSpec",
            ScdaError::BadDimension(_) => "BadDimension",
            ScdaError::ZeroOutput(_) => "ZeroOutput",
            ScdaError::DivergenceDetected(_) => "DivergenceDetected",
            ScdaError::InvalidConfig(_) => "InvalidConfig",
            ScdaError::MissingClass(_) => "MissingClass",
            ScdaError::EmptyMatrix => "EmptyMatrix",
            ScdaError::EmptyInput(_) => "EmptyInput",
            ScdaError::NotEnoughTissue { .. } => "NotEnoughTissue",
            ScdaError::DegenerateStains(_) => "DegenerateStains",
            ScdaError::InvalidImage(_) => "InvalidImage",
            ScdaError::InfeasibleSeparation { .. } => "InfeasibleSeparation",
            ScdaError::NotEnoughShots { .. } => "NotEnoughShots",
            ScdaError::RankDeficient => "RankDeficient",
            ScdaError::Io { .. } => "Io",
            ScdaError::Json(_) => "Json",
            ScdaError::Csv(_) => "Csv",
        }
    }
}
