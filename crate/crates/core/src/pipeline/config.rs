use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetFormat, SplitSpec};
use crate::error::{Error, Result};
use crate::graph::{DtwScaling, TemporalOptions};
use crate::model::{ModelConfig, Variant};
use crate::numeric::AdamConfig;

/// Everything a run needs: data locations, model shape and optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: Option<String>,
    pub format: DatasetFormat,
    pub topology: Option<String>,
    pub out: Option<String>,

    pub tau: usize,
    pub tau_out: usize,
    pub hidden: usize,
    pub d_ff: usize,
    pub blocks: usize,
    pub encoder_layers: usize,
    pub gat_heads: usize,
    pub attention_heads: usize,
    pub include_query: bool,
    pub variant: Variant,

    pub p: f64,
    pub rescale_temporal: bool,
    pub dtw_radius: usize,
    pub dtw_scaling: DtwScaling,
    pub dtw_max_points: usize,

    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub huber_delta: f64,
    pub seed: u64,
    pub stride: usize,

    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let split = SplitSpec::default();
        let dtw = TemporalOptions::default();
        TrainConfig {
            dataset: None,
            format: DatasetFormat::GenericCsv,
            topology: None,
            out: None,
            tau: 12,
            tau_out: 12,
            hidden: 64,
            d_ff: 128,
            blocks: 2,
            encoder_layers: 2,
            gat_heads: 4,
            attention_heads: 4,
            include_query: false,
            variant: Variant::Full,
            p: 50.0,
            rescale_temporal: false,
            dtw_radius: dtw.radius,
            dtw_scaling: dtw.scaling,
            dtw_max_points: dtw.max_points,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.epsilon,
            batch_size: 32,
            max_epochs: 2000,
            patience: 50,
            huber_delta: 1.0,
            seed: 0,
            stride: 1,
            train_fraction: split.train,
            val_fraction: split.val,
            test_fraction: split.test,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.tau_out == 0 {
            return Err(Error::Argument("tau and tau_out must be at least 1".into()));
        }
        if self.batch_size == 0 || self.stride == 0 || self.dtw_radius == 0 {
            return Err(Error::Argument("batch_size, stride and dtw_radius must be at least 1".into()));
        }
        if !(self.p > 0.0 && self.p < 100.0) {
            return Err(Error::Argument(format!("p must lie in (0, 100), got {}", self.p)));
        }
        if !(self.huber_delta > 0.0) || !(self.learning_rate >= 0.0) {
            return Err(Error::Argument("huber_delta must be positive and learning_rate nonnegative".into()));
        }
        self.split().validate()
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec {
            train: self.train_fraction,
            val: self.val_fraction,
            test: self.test_fraction,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_eps,
        }
    }

    pub fn temporal_options(&self) -> TemporalOptions {
        TemporalOptions {
            radius: self.dtw_radius,
            distance_floor: TemporalOptions::default().distance_floor,
            max_points: self.dtw_max_points,
            scaling: self.dtw_scaling,
        }
    }

    pub fn model_config(&self, nodes: usize, channels: usize) -> ModelConfig {
        ModelConfig {
            nodes,
            channels,
            tau: self.tau,
            tau_out: self.tau_out,
            hidden: self.hidden,
            d_ff: self.d_ff,
            blocks: self.blocks,
            encoder_layers: self.encoder_layers,
            gat_heads: self.gat_heads,
            attention_heads: self.attention_heads,
            include_query: self.include_query,
            variant: self.variant,
        }
    }

    /// Parses a JSON object or `key = value` lines (`#` comments allowed).
    /// Unknown keys are rejected either way.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let value = if trimmed.starts_with('{') {
            serde_json::from_str::<serde_json::Value>(text).map_err(|e| Error::Argument(format!("config: {e}")))?
        } else {
            let mut map = serde_json::Map::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Argument(format!("config line {}: expected key=value", i + 1)))?;
                let v = v.trim();
                let parsed = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
                map.insert(k.trim().to_string(), parsed);
            }
            serde_json::Value::Object(map)
        };
        let cfg: TrainConfig =
            serde_json::from_value(value).map_err(|e| Error::Argument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `key=value` pairs with JSON-encoded values, sorted by key.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let value = serde_json::to_value(self).expect("config serializes");
        value
            .as_object()
            .expect("config is an object")
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect()
    }

    pub fn from_key_values<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut map = serde_json::Map::new();
        for (k, v) in pairs {
            let parsed =
                serde_json::from_str(v).map_err(|e| Error::Format(format!("config value for {k}: {e}")))?;
            map.insert(k.to_string(), parsed);
        }
        serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::Format(format!("config: {e}")))
    }
}
