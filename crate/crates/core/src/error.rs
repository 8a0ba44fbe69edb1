use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad class of a failure, used to pick the CLI exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 1,
            ErrorCategory::Data => 2,
            ErrorCategory::Numerical => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("response in row {row} is not strictly positive ({value})")]
    NonPositiveResponse { row: usize, value: f64 },
    #[error("non-finite value in row {row}")]
    NonFiniteValue { row: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("smoothing coordinate {coordinate} has zero sample range")]
    DegenerateCoordinate { coordinate: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no response exceeds the threshold")]
    NoExceedances,
    #[error("no exceedance receives positive kernel weight at this location")]
    NoLocalExceedances,
    #[error("{available} local exceedances available, {required} required")]
    InsufficientLocalData { available: usize, required: usize },
    #[error("Hessian is singular even after ridge regularization")]
    SingularHessian,
    #[error("every tuning candidate failed")]
    AllCandidatesFailed,
    #[error("bandwidth {0} is outside (0, 1)")]
    BandwidthOutOfRange(f64),
    #[error("kernel derivative matrix has non-positive determinant {0}")]
    NonPositiveXiDeterminant(f64),
    #[error("significance level {0} is outside (0, 1)")]
    InvalidAlpha(f64),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("every grid point failed to fit")]
    AllPointsFailed,
    #[error("{failed} of {total} grid points failed to fit")]
    TooManyFailedPoints { failed: usize, total: usize },
    #[error("zero local information at grid point {point}")]
    ZeroLocalInformation { point: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("no residuals to assess")]
    EmptyResiduals,
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyDataset => "EmptyDataset",
            Error::NonPositiveResponse { .. } => "NonPositiveResponse",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::DegenerateCoordinate { .. } => "DegenerateCoordinate",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NoExceedances => "NoExceedances",
            Error::NoLocalExceedances => "NoLocalExceedances",
            Error::InsufficientLocalData { .. } => "InsufficientLocalData",
            Error::SingularHessian => "SingularHessian",
            Error::AllCandidatesFailed => "AllCandidatesFailed",
            Error::BandwidthOutOfRange(_) => "BandwidthOutOfRange",
            Error::NonPositiveXiDeterminant(_) => "NonPositiveXiDeterminant",
            Error::InvalidAlpha(_) => "InvalidAlpha",
            Error::EmptyGrid => "EmptyGrid",
            Error::AllPointsFailed => "AllPointsFailed",
            Error::TooManyFailedPoints { .. } => "TooManyFailedPoints",
            Error::ZeroLocalInformation { .. } => "ZeroLocalInformation",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyInput => "EmptyInput",
            Error::EmptyResiduals => "EmptyResiduals",
            Error::FileNotFound(_) => "FileNotFound",
            Error::Parse { .. } => "ParseError",
            Error::Io(_) => "IoError",
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_)
            | Error::InvalidAlpha(_)
            | Error::BandwidthOutOfRange(_)
            | Error::ShapeMismatch(_) => ErrorCategory::Usage,
            Error::EmptyDataset
            | Error::NonPositiveResponse { .. }
            | Error::NonFiniteValue { .. }
            | Error::DimensionMismatch { .. }
            | Error::DegenerateCoordinate { .. }
            | Error::NoExceedances
            | Error::EmptyInput
            | Error::EmptyResiduals
            | Error::FileNotFound(_)
            | Error::Parse { .. }
            | Error::Io(_) => ErrorCategory::Data,
            Error::NoLocalExceedances
            | Error::InsufficientLocalData { .. }
            | Error::SingularHessian
            | Error::AllCandidatesFailed
            | Error::NonPositiveXiDeterminant(_)
            | Error::EmptyGrid
            | Error::AllPointsFailed
            | Error::TooManyFailedPoints { .. }
            | Error::ZeroLocalInformation { .. } => ErrorCategory::Numerical,
        }
    }
}
