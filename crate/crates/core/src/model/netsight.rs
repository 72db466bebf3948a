use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::{init_attention, init_encoder, init_spatial, FrontParams, HeadParams, Init, ModelParams, ParamStore};
use super::predictor::predict_autoregressive;
use super::spatial::spatial_stack;
use super::temporal::{aggregate, transformer_encode};
use crate::error::{Error, Result};
use crate::graph::FusedAdjacency;
use crate::numeric::{seeded_rng, Mask, Tape, Tensor, Var};

/// Component bypasses used for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// Raw channels are linearly embedded and fed straight to the encoder.
    NoSpatial,
    /// Spatial outputs go to the predictor without transformer encoders.
    NoTemporal,
    NoNodeNorm,
    /// Physical topology plus self-loops replaces the fused adjacency.
    NoAst,
    NoPooling,
    /// Two-layer perceptron on the flattened joint representation.
    MlpPrediction,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoSpatial,
        Variant::NoTemporal,
        Variant::NoNodeNorm,
        Variant::NoAst,
        Variant::NoPooling,
        Variant::MlpPrediction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSpatial => "no_spatial",
            Variant::NoTemporal => "no_temporal",
            Variant::NoNodeNorm => "no_node_norm",
            Variant::NoAst => "no_ast",
            Variant::NoPooling => "no_pooling",
            Variant::MlpPrediction => "mlp_prediction",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown ablation variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nodes: usize,
    pub channels: usize,
    pub tau: usize,
    pub tau_out: usize,
    pub hidden: usize,
    pub d_ff: usize,
    /// Spatial blocks.
    pub blocks: usize,
    /// Layers per transformer encoder.
    pub encoder_layers: usize,
    pub gat_heads: usize,
    pub attention_heads: usize,
    /// Let the prediction query attend to its own row.
    pub include_query: bool,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("channels", self.channels),
            ("tau", self.tau),
            ("tau_out", self.tau_out),
            ("hidden", self.hidden),
            ("d_ff", self.d_ff),
            ("blocks", self.blocks),
            ("encoder_layers", self.encoder_layers),
            ("gat_heads", self.gat_heads),
            ("attention_heads", self.attention_heads),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Argument(format!("{name} must be at least 1")));
        }
        if self.hidden % self.attention_heads != 0 {
            return Err(Error::Argument(format!(
                "attention_heads {} must divide hidden {}",
                self.attention_heads, self.hidden
            )));
        }
        if self.tau < 2 && !self.include_query && self.variant != Variant::MlpPrediction {
            return Err(Error::Argument("tau must be at least 2 unless include_query is set".into()));
        }
        Ok(())
    }
}

/// The forecasting network: parameters, their layout and the graph it attends over.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSight {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: ModelParams<usize>,
    adjacency: Arc<Mask>,
    adjacency_bits: Vec<bool>,
}

impl NetSight {
    pub fn new(config: ModelConfig, adjacency: &FusedAdjacency, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut init = Init::new(&mut rng);
        let layout = build_layout(&mut init, &config);
        let params = init.store;
        Self::from_parts(config, params, adjacency.matrix.clone(), Some(layout))
    }

    /// Reassembles a model from stored parameters; shapes must match a fresh layout.
    pub fn from_parts(
        config: ModelConfig,
        params: ParamStore,
        adjacency_bits: Vec<bool>,
        layout: Option<ModelParams<usize>>,
    ) -> Result<Self> {
        config.validate()?;
        let n = config.nodes;
        if adjacency_bits.len() != n * n {
            return Err(Error::shape("model", format!("adjacency of {} entries for {n} nodes", adjacency_bits.len())));
        }
        let layout = match layout {
            Some(l) => l,
            None => {
                let mut rng = seeded_rng(0);
                let mut init = Init::new(&mut rng);
                let layout = build_layout(&mut init, &config);
                let fresh = init.store;
                let same = fresh.tensors.len() == params.tensors.len()
                    && fresh.tensors.iter().zip(&params.tensors).all(|(a, b)| a.shape() == b.shape());
                if !same {
                    return Err(Error::Format("parameter shapes do not match the model configuration".into()));
                }
                layout
            }
        };
        let adjacency = Arc::new(Mask::new(n, n, adjacency_bits.clone())?);
        Ok(NetSight {
            config,
            params,
            layout,
            adjacency,
            adjacency_bits,
        })
    }

    pub fn adjacency_bits(&self) -> &[bool] {
        &self.adjacency_bits
    }

    pub fn parameter_count(&self) -> usize {
        self.params.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`; `trainable` selects leaves over constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> (Vec<Var>, ModelParams<Var>) {
        let vars: Vec<Var> = self
            .params
            .tensors
            .iter()
            .map(|t| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let bound = self.layout.map(&mut |&i| vars[i]);
        (vars, bound)
    }

    /// Normalized `[tau_out, N, channels]` forecast for a `[tau, N, channels]` input.
    pub fn forward(&self, tape: &mut Tape, p: &ModelParams<Var>, input: &Tensor) -> Result<Var> {
        self.forward_steps(tape, p, input, self.config.tau_out)
    }

    /// Forecast of `steps` intervals. The attention head can run past the
    /// trained horizon; the perceptron head only produces `tau_out` steps.
    pub fn forward_steps(&self, tape: &mut Tape, p: &ModelParams<Var>, input: &Tensor, steps: usize) -> Result<Var> {
        let c = &self.config;
        if input.shape() != [c.tau, c.nodes, c.channels] {
            return Err(Error::shape(
                "forward",
                format!("input {:?}, expected [{}, {}, {}]", input.shape(), c.tau, c.nodes, c.channels),
            ));
        }
        let x = tape.constant(input.clone());
        let (local, super_node) = match &p.front {
            FrontParams::Spatial(sp) => {
                let out = spatial_stack(tape, x, sp, &self.adjacency, c.variant != Variant::NoNodeNorm)?;
                let sup = if c.variant == Variant::NoPooling {
                    None
                } else {
                    Some(tape.reshape(out.super_node, &[1, c.tau, c.hidden])?)
                };
                (out.local, sup)
            }
            FrontParams::Embed { w, b } => (tape.linear(x, *w, Some(*b))?, None),
        };
        let local = tape.swap_leading(local)?;
        let local = match &p.local_encoder {
            Some(enc) => transformer_encode(tape, local, enc, c.attention_heads, true)?,
            None => local,
        };
        let super_seq = match (super_node, &p.super_encoder) {
            (Some(s), Some(enc)) => Some(transformer_encode(tape, s, enc, c.attention_heads, true)?),
            (s, _) => s,
        };
        let g = match super_seq {
            Some(s) => aggregate(tape, local, s)?,
            None => local,
        };
        match &p.head {
            HeadParams::Attention { attn, w_out, b_out } => {
                predict_autoregressive(tape, g, steps, attn, *w_out, *b_out, c.attention_heads, c.include_query)
            }
            HeadParams::Mlp { w1, b1, w2, b2 } => {
                if steps != c.tau_out {
                    return Err(Error::Argument(format!(
                        "perceptron head forecasts exactly {} steps, asked for {steps}",
                        c.tau_out
                    )));
                }
                let flat = tape.reshape(g, &[c.nodes, c.tau * c.hidden])?;
                let h = tape.linear(flat, *w1, Some(*b1))?;
                let h = tape.relu(h)?;
                let y = tape.linear(h, *w2, Some(*b2))?;
                let y = tape.reshape(y, &[c.nodes, c.tau_out, c.channels])?;
                tape.swap_leading(y)
            }
        }
    }

    /// Normalized forecast without recording gradients.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.predict_steps(input, self.config.tau_out)
    }

    pub fn predict_steps(&self, input: &Tensor, steps: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (_, p) = self.bind(&mut tape, false);
        let out = self.forward_steps(&mut tape, &p, input, steps)?;
        Ok(tape.value(out).clone())
    }

    /// Huber loss against `target` and its gradient for every parameter.
    pub fn loss_and_grad(&self, input: &Tensor, target: &Tensor, delta: f64) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let (vars, p) = self.bind(&mut tape, true);
        let pred = self.forward(&mut tape, &p, input)?;
        let y = tape.constant(target.clone());
        let loss = tape.huber(pred, y, delta)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        Ok((value, vars.into_iter().map(|v| grads.take(v)).collect()))
    }

    pub fn loss(&self, input: &Tensor, target: &Tensor, delta: f64) -> Result<f64> {
        let pred = self.predict(input)?;
        crate::numeric::huber_loss(&pred, target, delta)
    }
}

fn build_layout(init: &mut Init, c: &ModelConfig) -> ModelParams<usize> {
    let v = c.variant;
    let front = if v == Variant::NoSpatial {
        init.scope("embed", |init| FrontParams::Embed {
            w: init.xavier("w", &[c.channels, c.hidden]),
            b: init.zeros("b", &[c.hidden]),
        })
    } else {
        FrontParams::Spatial(init.scope("spatial", |init| {
            init_spatial(init, c.nodes, c.channels, c.hidden, c.gat_heads, c.blocks)
        }))
    };
    let local_encoder = (v != Variant::NoTemporal)
        .then(|| init.scope("local_encoder", |init| init_encoder(init, c.hidden, c.d_ff, c.encoder_layers)));
    let super_encoder = matches!(v, Variant::Full | Variant::NoNodeNorm | Variant::NoAst | Variant::MlpPrediction)
        .then(|| init.scope("super_encoder", |init| init_encoder(init, c.hidden, c.d_ff, c.encoder_layers)));
    let head = init.scope("head", |init| {
        if v == Variant::MlpPrediction {
            HeadParams::Mlp {
                w1: init.xavier("w1", &[c.tau * c.hidden, c.d_ff]),
                b1: init.zeros("b1", &[c.d_ff]),
                w2: init.xavier("w2", &[c.d_ff, c.tau_out * c.channels]),
                b2: init.zeros("b2", &[c.tau_out * c.channels]),
            }
        } else {
            HeadParams::Attention {
                attn: init_attention(init, c.hidden),
                w_out: init.xavier("w_out", &[c.hidden, c.channels]),
                b_out: init.zeros("b_out", &[c.channels]),
            }
        }
    });
    ModelParams {
        front,
        local_encoder,
        super_encoder,
        head,
    }
}
