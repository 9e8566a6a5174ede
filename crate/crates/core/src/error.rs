use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar input fell outside the domain of a model function.
    #[error("domain error: {0}")]
    Domain(String),
    /// A model parameter violates its constraints (non-positive std etc).
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Unusable input data or configuration.
    #[error("invalid input: {0}")]
    Input(String),
    /// Caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A quantity needed by a metric or prediction cannot be computed.
    #[error("degenerate condition: {0}")]
    Degenerate(String),
    #[error("dataset validation failed:\n{0}")]
    Validation(ValidationReport),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Parameter(_) => "parameter",
            Error::Input(_) => "input",
            Error::Contract(_) => "contract",
            Error::Degenerate(_) => "degenerate",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

/// One problem found while validating a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationIssue {
    pub patient_id: Option<String>,
    pub message: String,
}

/// Itemized list of every problem found in a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn push(&mut self, patient_id: Option<&str>, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            patient_id: patient_id.map(str::to_owned),
            message: message.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            match &issue.patient_id {
                Some(id) => writeln!(f, "  - [{id}] {}", issue.message)?,
                None => writeln!(f, "  - {}", issue.message)?,
            }
        }
        Ok(())
    }
}
