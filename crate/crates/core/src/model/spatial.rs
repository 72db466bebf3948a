use std::sync::Arc;

use super::params::{GatHead, SpatialParams};
use crate::error::{Error, Result};
use crate::numeric::{Mask, Tape, Var};

pub const NODE_NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Output of the spatial stack for one window.
#[derive(Debug, Clone, Copy)]
pub struct SpatialOutput {
    /// `[tau, N, hidden]`
    pub local: Var,
    /// `[tau, 1, hidden]`
    pub super_node: Var,
}

/// `ReLU(x W + b)` applied to every node of every interval.
pub fn feed_forward(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.linear(x, w, Some(b))?;
    tape.relu(y)
}

/// Graph attention over `[tau, N, f]` node features.
///
/// Returns the ReLU of the head-averaged aggregation together with each
/// head's `[tau, N, N]` attention weights (row `j` attends over `N(j)`).
pub fn gat_attention(
    tape: &mut Tape,
    x: Var,
    heads: &[GatHead<Var>],
    adjacency: &Arc<Mask>,
) -> Result<(Var, Vec<Var>)> {
    if heads.is_empty() {
        return Err(Error::Argument("gat needs at least one head".into()));
    }
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("gat_layer", format!("expected [tau, N, f], got {shape:?}")));
    }
    let (t, n) = (shape[0], shape[1]);
    let mut sum: Option<Var> = None;
    let mut weights = Vec::with_capacity(heads.len());
    for head in heads {
        let z = tape.matmul(x, head.w)?;
        let src = tape.matmul(z, head.a_src)?;
        let src = tape.reshape(src, &[t, n])?;
        let dst = tape.matmul(z, head.a_dst)?;
        let dst = tape.reshape(dst, &[t, n])?;
        let e = tape.outer_sum(src, dst)?;
        let e = tape.leaky_relu(e, LEAKY_SLOPE)?;
        let alpha = tape.softmax(e, Some(adjacency.clone()))?;
        let out = tape.matmul(alpha, z)?;
        sum = Some(match sum {
            Some(s) => tape.add(s, out)?,
            None => out,
        });
        weights.push(alpha);
    }
    let avg = tape.scale(sum.expect("at least one head"), 1.0 / heads.len() as f64)?;
    Ok((tape.relu(avg)?, weights))
}

pub fn gat_layer(tape: &mut Tape, x: Var, heads: &[GatHead<Var>], adjacency: &Arc<Mask>) -> Result<Var> {
    Ok(gat_attention(tape, x, heads, adjacency)?.0)
}

/// Standardizes each node over all `tau * f` entries of the window, then
/// applies the per-node affine map `scale[j] * z + shift[j]`.
pub fn node_normalize(tape: &mut Tape, x: Var, scale: Var, shift: Var) -> Result<Var> {
    tape.node_norm(x, scale, shift, NODE_NORM_EPS)
}

/// `[tau, N, f]` nodes weighted by `w_pool` (`[N, 1]`) into `[tau, 1, f]`.
pub fn pool_super_node(tape: &mut Tape, x: Var, w_pool: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 || tape.shape(w_pool) != [s[1], 1] {
        return Err(Error::shape(
            "pool_super_node",
            format!("input {s:?} with weights {:?}", tape.shape(w_pool)),
        ));
    }
    let pooled = tape.matmul_t(x, w_pool, true, false)?;
    tape.reshape(pooled, &[s[0], 1, s[2]])
}

/// Stacked spatial blocks. Each block is feed-forward, GAT, a residual add of
/// the feed-forward output and node normalization; from the second block on,
/// the previous block's output is added back as a skip connection. The super
/// node pools the final block's normalized output.
pub fn spatial_stack(
    tape: &mut Tape,
    x: Var,
    params: &SpatialParams<Var>,
    adjacency: &Arc<Mask>,
    node_norm: bool,
) -> Result<SpatialOutput> {
    if params.blocks.is_empty() {
        return Err(Error::Argument("spatial stack needs at least one block".into()));
    }
    let mut input = x;
    let mut last_block = x;
    for (b, block) in params.blocks.iter().enumerate() {
        let ff = feed_forward(tape, input, block.w_ff, block.b_ff)?;
        let g = gat_layer(tape, ff, &block.heads, adjacency)?;
        let r = tape.add(g, ff)?;
        last_block = if node_norm {
            node_normalize(tape, r, block.norm_scale, block.norm_shift)?
        } else {
            r
        };
        input = if b == 0 { last_block } else { tape.add(last_block, input)? };
    }
    let super_node = pool_super_node(tape, last_block, params.w_pool)?;
    Ok(SpatialOutput {
        local: input,
        super_node,
    })
}

/// Adjacency mask from a row-major boolean matrix.
pub fn adjacency_mask(n: usize, keep: &[bool]) -> Result<Arc<Mask>> {
    Ok(Arc::new(Mask::new(n, n, keep.to_vec())?))
}
