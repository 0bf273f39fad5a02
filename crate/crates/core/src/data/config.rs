use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SyntheticSceneConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::net::NetConfig;
use crate::slic::SlicConfig;
use crate::train::TrainConfig;
use crate::vision::BalConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Weight initialization.
    pub init: u64,
    /// Shuffling and augmentation.
    pub data: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { init: 0, data: 1 }
    }
}

/// Every tunable of a run; snapshotted next to each run's outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub bal: BalConfig,
    pub net: NetConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub slic: SlicConfig,
    pub synth: SyntheticSceneConfig,
    pub seeds: Seeds,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.bal.validate()?;
        self.net.validate()?;
        self.loss.validate()?;
        self.synth.validate()
    }
}

/// Applies `section.key=value` (dots nest further). The value is parsed as
/// JSON when possible and taken as a string otherwise; unknown keys are
/// rejected.
pub fn apply_override(cfg: &RunConfig, spec: &str) -> Result<RunConfig> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override {spec:?} is not key=value")))?;
    let mut tree = serde_json::to_value(cfg).map_err(|e| Error::Usage(e.to_string()))?;
    let mut node = &mut tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| Error::Usage(format!("unknown config key {key:?}")))?;
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    // keep string-typed fields textual even when the text looks numeric
    *node = if node.is_string() && !parsed.is_string() { Value::String(raw.to_string()) } else { parsed };
    serde_json::from_value(tree).map_err(|e| Error::Usage(format!("override {spec:?}: {e}")))
}
