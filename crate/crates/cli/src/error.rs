use serde_json::json;
use thiserror::Error;

use spitzkit::bags::BagError;
use spitzkit::clinical::ClinicalError;
use spitzkit::cohort::CohortError;
use spitzkit::metrics::MetricsError;
use spitzkit::milnet::MilError;
use spitzkit::simflow::SimError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent configuration or inputs.
    #[error("{0}")]
    Config(String),
    /// A file the command depends on does not exist.
    #[error("missing {what}: {path}")]
    MissingArtifact {
        what: String,
        path: String,
        bag_id: Option<String>,
    },
    /// Training or fitting produced non-finite values or failed to converge.
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn missing_bag(bag_id: &str, path: impl Into<String>) -> Self {
        CliError::MissingArtifact {
            what: format!("bag {bag_id}"),
            path: path.into(),
            bag_id: Some(bag_id.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::Numeric(_) => "numeric",
            CliError::Io(_) => "io",
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_line(&self) -> String {
        let mut v = json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::MissingArtifact { path, bag_id, .. } = self {
            v["path"] = json!(path);
            if let Some(id) = bag_id {
                v["bag_id"] = json!(id);
            }
        }
        if let Some(field) = missing_field(&self.to_string()) {
            v["field"] = json!(field);
        }
        v.to_string()
    }
}

/// Extracts `x` from serde's "missing field `x`" message.
fn missing_field(msg: &str) -> Option<&str> {
    let rest = &msg[msg.find("missing field `")? + "missing field `".len()..];
    Some(&rest[..rest.find('`')?])
}

impl From<CohortError> for CliError {
    fn from(e: CohortError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BagError> for CliError {
    fn from(e: BagError) -> Self {
        CliError::Config(format!("bag: {e}"))
    }
}

impl From<MilError> for CliError {
    fn from(e: MilError) -> Self {
        match e {
            MilError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ClinicalError> for CliError {
    fn from(e: ClinicalError) -> Self {
        match e {
            ClinicalError::NotConverged { .. } => {
                CliError::Numeric(format!("logistic regression: {e}"))
            }
            _ => CliError::Config(format!("logistic regression: {e}")),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Config(format!("metrics: {e}"))
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(format!("csv: {e}"))
    }
}
