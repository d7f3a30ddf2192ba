use thiserror::Error;

/// Errors raised by the pupil-design toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: expected {expected}x{expected}, got {got}x{got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("unsupported Noll index {0} (valid range 1..={max})", max = crate::zernike::MAX_NOLL_INDEX)]
    InvalidNollIndex(i64),

    #[error("empty Zernike mode list")]
    EmptyModeList,

    #[error("coefficient vector has {got} entries, basis has {expected} modes")]
    CoefficientLength { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("pupil extends outside the reference circle at pixel ({row}, {col})")]
    PupilOutsideCircle { row: usize, col: usize },

    #[error("pupil value {value} at ({row}, {col}) outside [0, 1]")]
    PupilValueRange { row: usize, col: usize, value: f64 },

    #[error("pupil has zero area")]
    EmptyPupil,

    #[error("pupil is not contained in the SLM beam at pixel ({row}, {col})")]
    PupilOutsideBeam { row: usize, col: usize },

    #[error("invalid hull: {0}")]
    InvalidHull(String),

    #[error("degenerate hull: vertices are collinear or enclose no area")]
    DegenerateHull,

    #[error("sampling budget of {0} attempts exhausted")]
    SamplingBudgetExhausted(usize),

    #[error("symmetric part fails the flip-symmetry check (max deviation {0:e})")]
    NotSymmetric(f64),

    #[error("small-angle precondition violated: max |phase| = {0} rad")]
    PhaseTooLarge(f64),

    #[error("masked Zernike basis is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("checksum mismatch in {file}: expected {expected:016x}, found {found:016x}")]
    ChecksumMismatch {
        file: String,
        expected: u64,
        found: u64,
    },

    #[error("unsupported dataset version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("record has no generation seed; PSF cannot be regenerated")]
    MissingSeed,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
