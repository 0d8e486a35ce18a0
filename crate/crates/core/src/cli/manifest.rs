use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::domain::{BaselineKind, RunConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: &str = "trt-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the run directory.
    pub file: String,
    pub status: ProblemStatus,
    pub rounds_completed: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub trt_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineKind>,
    pub config_fingerprint: String,
    pub config: RunConfig,
    pub problems: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(
        config: &RunConfig,
        baseline: Option<BaselineKind>,
        problems: Vec<ManifestEntry>,
    ) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            trt_version: env!("CARGO_PKG_VERSION").to_string(),
            baseline,
            config_fingerprint: config.fingerprint(),
            config: config.clone(),
            problems,
        }
    }

    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::io(&path, e))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(CliError::Config(format!(
                "{}: unsupported manifest schema `{}`",
                path.display(),
                m.schema
            )));
        }
        Ok(m)
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(".manifest.json.tmp");
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&tmp, body + "\n").map_err(|e| CliError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))
    }
}
