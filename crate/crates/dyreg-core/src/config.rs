//! One JSON document describes a whole experiment: dataset, model and
//! training sections. Flag overrides address fields by dot path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::syncshapes::DatasetConfig;
use crate::trainkit::TrainConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Strict parse: unknown keys anywhere are rejected.
    pub fn from_json(json: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file and applies `key=value` dot-path overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut value: serde_json::Value = serde_json::from_str(&text)?;
        for entry in overrides {
            let (key, raw) = entry.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("override '{entry}' is not of the form key=value"))
            })?;
            apply_override(&mut value, key, raw)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets `value[path...] = parsed(raw)`, creating intermediate objects. The
/// final strict deserialization still rejects paths that name no real field.
fn apply_override(value: &mut serde_json::Value, dot_path: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(_) => serde_json::Value::String(raw.to_string()),
    };
    let mut cursor = value;
    let parts: Vec<&str> = dot_path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::InvalidConfig(format!("bad override path '{dot_path}'")));
        }
        let obj = cursor.as_object_mut().ok_or_else(|| {
            Error::InvalidConfig(format!("override path '{dot_path}' crosses a non-object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!()
}
