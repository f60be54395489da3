//! Experiment configuration: one JSON document holding every hyperparameter
//! of a run. Unknown keys are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::AlignConfig;
use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::mag::{PropagationConfig, SplitSpec};
use crate::taa::TaaConfig;
use crate::tasks::{ModelKind, TrainConfig};

/// Hidden sizes of the aggregation network; the width comes from
/// [`ExperimentConfig::d`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaaSection {
    pub hidden_attn: usize,
    pub hidden_gate: usize,
    pub heads: usize,
}

impl Default for TaaSection {
    fn default() -> Self {
        Self {
            hidden_attn: 32,
            hidden_gate: 32,
            heads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    /// Working feature width after projection.
    pub d: usize,
    /// Re-add self-loops after loading.
    pub self_loops: bool,
    pub seed: u64,
    pub propagation: PropagationConfig,
    pub taa: TaaSection,
    pub align: AlignConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Campa,
            d: 32,
            self_loops: false,
            seed: 0,
            propagation: PropagationConfig::shared(3, 0.5, 0.3).expect("valid default"),
            taa: TaaSection::default(),
            align: AlignConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be positive".into()));
        }
        self.propagation.validate()?;
        self.taa_config().validate()?;
        self.align.validate()?;
        self.train.validate()?;
        self.split.validate()
    }

    pub fn taa_config(&self) -> TaaConfig {
        TaaConfig {
            heads: self.taa.heads,
            ..TaaConfig::new(self.d, self.taa.hidden_attn, self.taa.hidden_gate)
        }
    }

    /// SHA-256 of the compact JSON form; recorded next to checkpoints and
    /// trajectory stores.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        sha256_hex(text.as_bytes())
    }

    /// Sets a dotted key such as `train.lr` or `propagation.k`. The value is
    /// parsed as JSON, falling back to a plain string. The result is
    /// re-validated as a whole.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let updated: Self =
            serde_json::from_value(doc).map_err(|e| Error::Config(format!("{key} = {raw}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}
