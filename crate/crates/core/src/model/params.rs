//! Parameter trees.
//!
//! Each struct is generic over the leaf type: `usize` indexes the flat
//! tensor store, `Var` is the same tree bound to a tape.

use crate::numeric::{xavier_uniform, Rng, Tensor};

/// Flat, ordered parameter storage with a name per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

pub(crate) struct Init<'a> {
    pub rng: &'a mut Rng,
    pub store: ParamStore,
    prefix: Vec<String>,
}

impl<'a> Init<'a> {
    pub fn new(rng: &'a mut Rng) -> Self {
        Init {
            rng,
            store: ParamStore {
                names: Vec::new(),
                tensors: Vec::new(),
            },
            prefix: Vec::new(),
        }
    }

    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let r = f(self);
        self.prefix.pop();
        r
    }

    fn push(&mut self, name: &str, t: Tensor) -> usize {
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.store.names.push(full);
        self.store.tensors.push(t);
        self.store.tensors.len() - 1
    }

    pub fn xavier(&mut self, name: &str, shape: &[usize]) -> usize {
        let t = xavier_uniform(self.rng, shape);
        self.push(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.push(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> usize {
        self.push(name, Tensor::full(shape, 1.0))
    }
}

/// One GAT head: `w` transforms node features, `a_src`/`a_dst` score the
/// two endpoints of an edge in the transformed space.
#[derive(Debug, Clone, PartialEq)]
pub struct GatHead<T> {
    pub w: T,
    pub a_src: T,
    pub a_dst: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialBlockParams<T> {
    pub w_ff: T,
    pub b_ff: T,
    pub heads: Vec<GatHead<T>>,
    /// Per-node scale, initialized to 1.
    pub norm_scale: T,
    /// Per-node shift, initialized to 0.
    pub norm_shift: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialParams<T> {
    pub blocks: Vec<SpatialBlockParams<T>>,
    /// `[N, 1]` super-node weights applied to the final block.
    pub w_pool: T,
}

/// Multi-head attention projections; heads split the hidden width evenly.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_a: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<T> {
    pub attn: AttentionParams<T>,
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub w_ff1: T,
    pub b_ff1: T,
    pub w_ff2: T,
    pub b_ff2: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub layers: Vec<EncoderLayerParams<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams<T> {
    Attention {
        attn: AttentionParams<T>,
        w_out: T,
        b_out: T,
    },
    Mlp {
        w1: T,
        b1: T,
        w2: T,
        b2: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrontParams<T> {
    Spatial(SpatialParams<T>),
    /// Linear embedding of raw channels when spatial modeling is removed.
    Embed { w: T, b: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub front: FrontParams<T>,
    pub local_encoder: Option<EncoderParams<T>>,
    pub super_encoder: Option<EncoderParams<T>>,
    pub head: HeadParams<T>,
}

impl<T> GatHead<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> GatHead<U> {
        GatHead {
            w: f(&self.w),
            a_src: f(&self.a_src),
            a_dst: f(&self.a_dst),
        }
    }
}

impl<T> SpatialBlockParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> SpatialBlockParams<U> {
        SpatialBlockParams {
            w_ff: f(&self.w_ff),
            b_ff: f(&self.b_ff),
            heads: self.heads.iter().map(|h| h.map(f)).collect(),
            norm_scale: f(&self.norm_scale),
            norm_shift: f(&self.norm_shift),
        }
    }
}

impl<T> SpatialParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> SpatialParams<U> {
        SpatialParams {
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
            w_pool: f(&self.w_pool),
        }
    }
}

impl<T> AttentionParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            w_q: f(&self.w_q),
            w_k: f(&self.w_k),
            w_v: f(&self.w_v),
            w_a: f(&self.w_a),
        }
    }
}

impl<T> EncoderLayerParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderLayerParams<U> {
        EncoderLayerParams {
            attn: self.attn.map(f),
            ln1_gamma: f(&self.ln1_gamma),
            ln1_beta: f(&self.ln1_beta),
            w_ff1: f(&self.w_ff1),
            b_ff1: f(&self.b_ff1),
            w_ff2: f(&self.w_ff2),
            b_ff2: f(&self.b_ff2),
            ln2_gamma: f(&self.ln2_gamma),
            ln2_beta: f(&self.ln2_beta),
        }
    }
}

impl<T> EncoderParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderParams<U> {
        EncoderParams {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
        }
    }
}

impl<T> HeadParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> HeadParams<U> {
        match self {
            HeadParams::Attention { attn, w_out, b_out } => HeadParams::Attention {
                attn: attn.map(f),
                w_out: f(w_out),
                b_out: f(b_out),
            },
            HeadParams::Mlp { w1, b1, w2, b2 } => HeadParams::Mlp {
                w1: f(w1),
                b1: f(b1),
                w2: f(w2),
                b2: f(b2),
            },
        }
    }
}

impl<T> FrontParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> FrontParams<U> {
        match self {
            FrontParams::Spatial(s) => FrontParams::Spatial(s.map(f)),
            FrontParams::Embed { w, b } => FrontParams::Embed { w: f(w), b: f(b) },
        }
    }
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            front: self.front.map(f),
            local_encoder: self.local_encoder.as_ref().map(|e| e.map(f)),
            super_encoder: self.super_encoder.as_ref().map(|e| e.map(f)),
            head: self.head.map(f),
        }
    }
}

pub(crate) fn init_attention(init: &mut Init, width: usize) -> AttentionParams<usize> {
    AttentionParams {
        w_q: init.xavier("w_q", &[width, width]),
        w_k: init.xavier("w_k", &[width, width]),
        w_v: init.xavier("w_v", &[width, width]),
        w_a: init.xavier("w_a", &[width, width]),
    }
}

pub(crate) fn init_encoder(init: &mut Init, width: usize, d_ff: usize, layers: usize) -> EncoderParams<usize> {
    EncoderParams {
        layers: (0..layers)
            .map(|l| {
                init.scope(format!("layer{l}"), |init| EncoderLayerParams {
                    attn: init.scope("attn", |init| init_attention(init, width)),
                    ln1_gamma: init.ones("ln1_gamma", &[width]),
                    ln1_beta: init.zeros("ln1_beta", &[width]),
                    w_ff1: init.xavier("w_ff1", &[width, d_ff]),
                    b_ff1: init.zeros("b_ff1", &[d_ff]),
                    w_ff2: init.xavier("w_ff2", &[d_ff, width]),
                    b_ff2: init.zeros("b_ff2", &[width]),
                    ln2_gamma: init.ones("ln2_gamma", &[width]),
                    ln2_beta: init.zeros("ln2_beta", &[width]),
                })
            })
            .collect(),
    }
}

pub(crate) fn init_spatial(
    init: &mut Init,
    nodes: usize,
    channels: usize,
    width: usize,
    heads: usize,
    blocks: usize,
) -> SpatialParams<usize> {
    let blocks = (0..blocks)
        .map(|b| {
            let input = if b == 0 { channels } else { width };
            init.scope(format!("block{b}"), |init| SpatialBlockParams {
                w_ff: init.xavier("w_ff", &[input, width]),
                b_ff: init.zeros("b_ff", &[width]),
                heads: (0..heads)
                    .map(|m| {
                        init.scope(format!("head{m}"), |init| GatHead {
                            w: init.xavier("w", &[width, width]),
                            a_src: init.xavier("a_src", &[width, 1]),
                            a_dst: init.xavier("a_dst", &[width, 1]),
                        })
                    })
                    .collect(),
                norm_scale: init.ones("norm_scale", &[nodes]),
                norm_shift: init.zeros("norm_shift", &[nodes]),
            })
        })
        .collect();
    SpatialParams {
        blocks,
        w_pool: init.xavier("w_pool", &[nodes, 1]),
    }
}
