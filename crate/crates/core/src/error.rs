use thiserror::Error;

#[derive(Debug, Error)]
pub enum IfaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("row {row}, item {item}: category code {code} out of range (item has {categories} categories)")]
    CategoryOutOfRange {
        row: usize,
        item: usize,
        code: i64,
        categories: usize,
    },

    #[error("angle {angle} at ({row}, {col}) is outside (0, pi]")]
    InvalidAngle { row: usize, col: usize, angle: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("correlation matrix is not positive semi-definite")]
    NotPositiveSemiDefinite,

    #[error("factor correlation matrix is singular")]
    SingularCorrelation,

    #[error("all importance weights underflowed")]
    DegenerateWeights,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("backward pass requested without a matching forward pass")]
    NoForwardPass,

    #[error("model spec error: {0}")]
    Spec(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl IfaError {
    /// True for failures that come from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            IfaError::Numerical(_)
                | IfaError::DegenerateWeights
                | IfaError::SingularCorrelation
                | IfaError::NotPositiveSemiDefinite
        )
    }
}

pub type Result<T> = std::result::Result<T, IfaError>;
