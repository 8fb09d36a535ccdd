use thiserror::Error;

#[derive(Debug, Error)]
pub enum GawsError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observation {index} ({value}) is outside the support of {family}")]
    SupportViolation {
        family: &'static str,
        index: usize,
        value: f64,
    },

    #[error("not enough observations: need {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("penalized normal equations are singular for {0}")]
    SingularSystem(String),

    #[error("model space is degenerate: {0}")]
    DegenerateSpace(String),

    #[error("unknown series '{0}'")]
    UnknownSeries(String),

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("inconsistent sampling frequency: {0}")]
    InconsistentFrequency(String),

    #[error("series '{0}' has no observations")]
    EmptySeries(String),

    #[error("label/series mismatch: {0}")]
    LabelMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GawsError {
    /// Stable machine-readable kind, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            GawsError::Domain(_) => "Domain",
            GawsError::InvalidArgument(_) => "InvalidArgument",
            GawsError::SupportViolation { .. } => "SupportViolation",
            GawsError::InsufficientData { .. } => "InsufficientData",
            GawsError::SingularSystem(_) => "SingularSystem",
            GawsError::DegenerateSpace(_) => "DegenerateSpace",
            GawsError::UnknownSeries(_) => "UnknownSeries",
            GawsError::MalformedRow { .. } => "MalformedRow",
            GawsError::InconsistentFrequency(_) => "InconsistentFrequency",
            GawsError::EmptySeries(_) => "EmptySeries",
            GawsError::LabelMismatch(_) => "LabelMismatch",
            GawsError::Config(_) => "Config",
            GawsError::Io(_) => "Io",
            GawsError::Csv(_) => "Csv",
            GawsError::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, GawsError>;
