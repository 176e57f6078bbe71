use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid study configuration: {0}")]
    Study(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("row {row}, column `{column}`: {message}")]
    Cell { row: u64, column: String, message: String },

    #[error("record `{patient}`: {message}")]
    Record { patient: String, message: String },

    #[error("duplicate patient id `{0}`")]
    DuplicatePatient(String),

    #[error("unknown arm `{0}`")]
    UnknownArm(String),

    #[error("unknown therapy `{0}`")]
    UnknownTherapy(String),

    #[error("unknown patient `{0}`")]
    UnknownPatient(String),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("patient `{patient}` is not eligible for arm `{arm}`")]
    Ineligible { patient: String, arm: String },

    #[error("arm `{0}` has no training patients")]
    EmptyArm(String),

    #[error("arm `{0}` is disabled (no training data)")]
    DisabledArm(String),

    #[error("no adjustment entry for arm `{0}`")]
    MissingAdjustment(String),

    #[error("patient `{0}` has no final outcome (dropout)")]
    MissingOutcome(String),

    #[error("patient `{0}` has no eligible arm")]
    NoEligibleArm(String),

    #[error("invalid training input: {0}")]
    Training(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn record(patient: &str, message: impl Into<String>) -> Self {
        Error::Record {
            patient: patient.to_string(),
            message: message.into(),
        }
    }
}
