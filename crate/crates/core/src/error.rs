use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("duplicate feature id `{0}`")]
    DuplicateId(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no features with (nearly) complete data; factor estimation is impossible")]
    NoCompleteFeatures,

    #[error("design matrix is singular after masking")]
    SingularDesign,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("all labels are identical; logistic fit is degenerate")]
    DegenerateLabels,

    #[error("empty input")]
    EmptyInput,

    #[error("requested rank {k} is not below {limit}")]
    Rank { k: usize, limit: usize },

    #[error("feature has no missing cells; its missingness mechanism is not estimable")]
    InsufficientMissingness,

    #[error("zero is not in the interior of the convex hull of the moment vectors")]
    HullViolation,

    #[error("bootstrap degenerate: {failed} failed replicates for B = {b}")]
    BootstrapDegenerate { failed: usize, b: usize },

    #[error("at least two converged fits are needed to estimate the prior, got {0}")]
    PriorDegenerate(usize),

    #[error("weighted design is singular (condition number {0:.3e})")]
    SingularWeightedDesign(f64),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("simulation calibration failed; achieved spectrum {achieved:?} vs target {target:?}")]
    Calibration { achieved: Vec<f64>, target: Vec<f64> },

    #[error("link has infinite variance (t with nu = {0} <= 2)")]
    InfiniteVariance(f64),

    #[error("artifact was built for matrix hash {expected}, got {actual}")]
    StaleArtifact { expected: String, actual: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the failure stems from bad input (as opposed to a numerical failure).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DuplicateId(_)
                | Error::InvalidInput(_)
                | Error::EmptyInput
                | Error::StaleArtifact { .. }
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::NoCompleteFeatures
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
