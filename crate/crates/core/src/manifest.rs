use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Provenance embedded in every artifact written to disk. Contains no
/// timestamps, so identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_id: Option<String>,
    pub seed: u64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(config: Value, seed: u64) -> Self {
        Self {
            config,
            dataset_fingerprint: None,
            checkpoint_id: None,
            seed,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    pub fn with_dataset(mut self, fingerprint: impl Into<String>) -> Self {
        self.dataset_fingerprint = Some(fingerprint.into());
        self
    }

    pub fn with_checkpoint(mut self, id: impl Into<String>) -> Self {
        self.checkpoint_id = Some(id.into());
        self
    }
}
