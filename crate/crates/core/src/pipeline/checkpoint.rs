//! Checkpoint container.
//!
//! A text header of `key=value` lines, closed by a line reading `end`,
//! followed by little-endian f64 blocks in this order:
//!
//! 1. model parameters, in `tensor` header order
//! 2. Adam first moments, same order
//! 3. Adam second moments, same order
//! 4. normalization minimum, then scale, one value per channel
//! 5. history, three values per epoch: epoch, train loss, validation loss
//!
//! Header values are JSON. Tensor shapes are listed so the blocks can be
//! sliced without rebuilding the model.

use std::ops::Range;
use std::path::Path;

use super::config::TrainConfig;
use super::train::{EpochRecord, PreparedData, TrainOutcome};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::graph::FusedAdjacency;
use crate::model::{ModelConfig, NetSight, ParamStore};
use crate::numeric::{AdamState, Tensor};

pub const MAGIC: &str = "NETSIGHT-CKPT 1";

/// Everything needed to forecast again or continue training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: NetSight,
    pub adam: AdamState,
    pub stats: NormStats,
    pub adjacency: FusedAdjacency,
    /// Intervals the normalization statistics and temporal graph were fitted on.
    pub fitted_on: Range<usize>,
    pub node_labels: Vec<String>,
    pub channel_labels: Vec<String>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn from_outcome(config: &TrainConfig, data: &PreparedData, outcome: TrainOutcome) -> Self {
        Checkpoint {
            config: config.clone(),
            adjacency: data.adjacency.clone(),
            model: outcome.model,
            adam: outcome.adam,
            stats: data.stats.clone(),
            fitted_on: data.ranges[0].clone(),
            node_labels: data.series.node_labels.clone(),
            channel_labels: data.series.channel_labels.clone(),
            history: outcome.history,
            best_epoch: outcome.best_epoch,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = format!("{MAGIC}\n");
        let mut line = |k: &str, v: String| {
            h.push_str(k);
            h.push('=');
            h.push_str(&v);
            h.push('\n');
        };
        for (k, v) in self.config.to_key_values() {
            line(&format!("config.{k}"), v);
        }
        let model = serde_json::to_value(&self.model.config).expect("model config serializes");
        for (k, v) in model.as_object().expect("object") {
            line(&format!("model.{k}"), v.to_string());
        }
        line("adam.t", self.adam.t.to_string());
        let a = &self.adjacency;
        line("adjacency.n", a.n.to_string());
        line("adjacency.p", json(&a.p));
        line("adjacency.threshold", json(&a.threshold));
        line(
            "adjacency.bits",
            format!("\"{}\"", a.matrix.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>()),
        );
        line("fitted_on.start", self.fitted_on.start.to_string());
        line("fitted_on.end", self.fitted_on.end.to_string());
        line("labels.nodes", json(&self.node_labels));
        line("labels.channels", json(&self.channel_labels));
        line("history.epochs", self.history.len().to_string());
        line("history.best_epoch", self.best_epoch.to_string());
        for (name, t) in self.model.params.names.iter().zip(&self.model.params.tensors) {
            line("tensor", json(&(name, t.shape())));
        }
        h.push_str("end\n");

        let mut out = h.into_bytes();
        let mut put = |vals: &[f64]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for group in [&self.model.params.tensors, &self.adam.m, &self.adam.v] {
            for t in group {
                put(t.data());
            }
        }
        put(&self.stats.min);
        put(&self.stats.scale);
        for r in &self.history {
            put(&[r.epoch as f64, r.train_loss, r.val_loss]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let end = find_header_end(bytes).ok_or_else(|| Error::Format("header terminator not found".into()))?;
        let header = std::str::from_utf8(&bytes[..end - "end\n".len()]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Format(format!("missing {MAGIC:?} magic line")));
        }

        let mut config_kv = Vec::new();
        let mut model_map = serde_json::Map::new();
        let mut fields = std::collections::BTreeMap::new();
        let mut tensors: Vec<(String, Vec<usize>)> = Vec::new();
        for l in lines {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::Format(format!("bad header line {l:?}")))?;
            if let Some(key) = k.strip_prefix("config.") {
                config_kv.push((key, v));
            } else if let Some(key) = k.strip_prefix("model.") {
                model_map.insert(key.to_string(), parse_json(k, v)?);
            } else if k == "tensor" {
                tensors.push(serde_json::from_str(v).map_err(|e| Error::Format(format!("tensor entry: {e}")))?);
            } else {
                fields.insert(k, v);
            }
        }
        let field = |k: &str| -> Result<&str> {
            fields.get(k).copied().ok_or_else(|| Error::Format(format!("missing header key {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            field(k)?.parse().map_err(|_| Error::Format(format!("header key {k} is not an integer")))
        };

        let config = TrainConfig::from_key_values(config_kv)?;
        let model_config: ModelConfig = serde_json::from_value(serde_json::Value::Object(model_map))
            .map_err(|e| Error::Format(format!("model config: {e}")))?;
        let n = num("adjacency.n")?;
        let bits: String = serde_json::from_str(field("adjacency.bits")?)
            .map_err(|e| Error::Format(format!("adjacency bits: {e}")))?;
        if bits.len() != n * n || bits.chars().any(|c| c != '0' && c != '1') {
            return Err(Error::Format("adjacency bits malformed".into()));
        }
        let adjacency = FusedAdjacency {
            matrix: bits.chars().map(|c| c == '1').collect(),
            n,
            p: parse_json("adjacency.p", field("adjacency.p")?)?,
            threshold: parse_json("adjacency.threshold", field("adjacency.threshold")?)?,
        };
        let node_labels: Vec<String> = parse_json("labels.nodes", field("labels.nodes")?)?;
        let channel_labels: Vec<String> = parse_json("labels.channels", field("labels.channels")?)?;
        let epochs = num("history.epochs")?;
        let t = field("adam.t")?.parse().map_err(|_| Error::Format("adam.t is not an integer".into()))?;

        let mut reader = Blocks::new(&bytes[end..]);
        let take_group = |reader: &mut Blocks| -> Result<Vec<Tensor>> {
            tensors.iter().map(|(_, shape)| Tensor::new(shape, reader.take(shape.iter().product())?)).collect()
        };
        let params = take_group(&mut reader)?;
        let m = take_group(&mut reader)?;
        let v = take_group(&mut reader)?;
        let d = channel_labels.len();
        let stats = NormStats {
            min: reader.take(d)?,
            scale: reader.take(d)?,
        };
        let raw = reader.take(epochs * 3)?;
        if !reader.is_empty() {
            return Err(Error::Format("trailing bytes after the last block".into()));
        }
        let history = raw
            .chunks(3)
            .map(|c| EpochRecord {
                epoch: c[0] as usize,
                train_loss: c[1],
                val_loss: c[2],
            })
            .collect();

        let store = ParamStore {
            names: tensors.into_iter().map(|(name, _)| name).collect(),
            tensors: params,
        };
        let model = NetSight::from_parts(model_config, store, adjacency.matrix.clone(), None)?;
        Ok(Checkpoint {
            config,
            model,
            adam: AdamState { m, v, t },
            stats,
            adjacency,
            fitted_on: num("fitted_on.start")?..num("fitted_on.end")?,
            node_labels,
            channel_labels,
            history,
            best_epoch: num("history.best_epoch")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn json<T: serde::Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("header value serializes")
}

fn parse_json<T: serde::de::DeserializeOwned>(key: &str, v: &str) -> Result<T> {
    serde_json::from_str(v).map_err(|e| Error::Format(format!("header key {key}: {e}")))
}

/// Offset just past the `end` line.
fn find_header_end(bytes: &[u8]) -> Option<usize> {
    const END: &[u8] = b"\nend\n";
    bytes.windows(END.len()).position(|w| w == END).map(|i| i + END.len())
}

struct Blocks<'a> {
    rest: &'a [u8],
}

impl<'a> Blocks<'a> {
    fn new(rest: &'a [u8]) -> Self {
        Blocks { rest }
    }

    fn take(&mut self, count: usize) -> Result<Vec<f64>> {
        let len = count * 8;
        if self.rest.len() < len {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (head, tail) = self.rest.split_at(len);
        self.rest = tail;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn is_empty(&self) -> bool {
        self.rest.is_empty()
    }
}
