//! Command failures with stable exit codes and a JSON error record.

use std::fmt;
use std::path::Path;

use serde_json::{json, Map, Value};

pub const EXIT_OK: i32 = 0;
/// Bad configuration, arguments or inputs.
pub const EXIT_VALIDATION: i32 = 2;
/// A run that started and then failed (I/O, divergence, corrupt files).
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub exit_code: i32,
    pub kind: String,
    pub message: String,
    /// Extra fields of the error record, such as `path` or `checkpoint`.
    pub details: Map<String, Value>,
}

impl CliError {
    pub fn validation(field: &str, reason: impl fmt::Display) -> Self {
        let mut details = Map::new();
        details.insert("field".into(), json!(field));
        Self {
            exit_code: EXIT_VALIDATION,
            kind: "invalid".into(),
            message: format!("invalid {field}: {reason}"),
            details,
        }
    }

    pub fn with_path(mut self, path: &Path) -> Self {
        self.details.insert("path".into(), json!(path.display().to_string()));
        self
    }

    pub fn with_detail(mut self, key: &str, value: Value) -> Self {
        self.details.insert(key.into(), value);
        self
    }

    /// The machine-readable record printed on stderr.
    pub fn record(&self) -> Value {
        let mut rec = Map::new();
        rec.insert("status".into(), json!("error"));
        rec.insert("exit_code".into(), json!(self.exit_code));
        rec.insert("kind".into(), json!(self.kind));
        rec.insert("message".into(), json!(self.message));
        rec.extend(self.details.clone());
        Value::Object(rec)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<dapi2ck::Error> for CliError {
    fn from(e: dapi2ck::Error) -> Self {
        use dapi2ck::Error as E;
        let mut details = Map::new();
        match &e {
            E::Io { path, .. } | E::Image { path, .. } | E::Json { path, .. } | E::Checkpoint { path, .. } => {
                details.insert("path".into(), json!(path.display().to_string()));
            }
            E::Invalid { what, .. } => {
                details.insert("field".into(), json!(what));
            }
            E::IdMismatch { missing_pred, missing_ref } => {
                details.insert("missing_from_predictions".into(), json!(missing_pred));
                details.insert("missing_from_references".into(), json!(missing_ref));
            }
            _ => {}
        }
        Self {
            exit_code: if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME },
            kind: e.kind().into(),
            message: e.to_string(),
            details,
        }
    }
}
