use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use vstory::generation::GenConfig;
use vstory::model::ModelConfig;
use vstory::training::TrainConfig;

/// Everything a run can be configured with. Files are TOML unless the
/// extension is `.json`; missing sections and fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generate: GenConfig,
}

/// A parsed config plus the raw document, to tell explicit values from
/// defaults.
pub struct LoadedConfig {
    pub config: RunConfig,
    raw: Value,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self {
                config: RunConfig::default(),
                raw: Value::Object(Default::default()),
            });
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let raw: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            let doc: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            serde_json::to_value(doc)?
        };
        let config = serde_json::from_value(raw.clone()).with_context(|| format!("invalid config {}", path.display()))?;
        Ok(Self { config, raw })
    }

    /// Sets a data-derived model dimension, refusing to override a
    /// conflicting explicit value.
    pub fn fit_model_dim(&mut self, key: &str, actual: usize, source: &str) -> Result<()> {
        if let Some(v) = self.raw.get("model").and_then(|m| m.get(key)) {
            if v.as_u64() != Some(actual as u64) {
                bail!("config sets model.{key} = {v} but {source} has {actual}");
            }
        }
        match key {
            "feature_dim" => self.config.model.feature_dim = actual,
            "vocab_size" => self.config.model.vocab_size = actual,
            _ => unreachable!("not a data-derived dimension"),
        }
        Ok(())
    }
}

/// The config as recorded in manifests: output locations are left out so
/// the same run in another directory records the same bytes.
pub fn manifest_value(config: &RunConfig) -> Value {
    let mut c = config.clone();
    c.train.checkpoint_dir = None;
    serde_json::to_value(c).expect("config serializes")
}
