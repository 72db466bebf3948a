//! Spatial blocks, temporal encoders and the autoregressive prediction head.

mod netsight;
mod params;
mod predictor;
mod spatial;
mod temporal;

pub use netsight::{ModelConfig, NetSight, Variant};
pub use params::{
    AttentionParams, EncoderLayerParams, EncoderParams, FrontParams, GatHead, HeadParams, ModelParams, ParamStore,
    SpatialBlockParams, SpatialParams,
};
pub use predictor::{predict_autoregressive, predict_step, PredictorState};
pub use spatial::{
    adjacency_mask, feed_forward, gat_attention, gat_layer, node_normalize, pool_super_node, spatial_stack,
    SpatialOutput, LEAKY_SLOPE, NODE_NORM_EPS,
};
pub use temporal::{
    aggregate, attend, positional_encode, positional_encoding, self_attention, self_attention_weights,
    transformer_encode, LAYER_NORM_EPS,
};
