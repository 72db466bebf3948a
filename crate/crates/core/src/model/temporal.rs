use super::params::{AttentionParams, EncoderLayerParams, EncoderParams};
use crate::error::{Error, Result};
use crate::numeric::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Sinusoidal table of shape `[len, width]`: even features `sin(i / 10000^(2c/width))`,
/// odd features the matching cosine.
pub fn positional_encoding(len: usize, width: usize) -> Tensor {
    let padded = width + width % 2;
    let mut data = Vec::with_capacity(len * width);
    for i in 0..len {
        for f in 0..width {
            let c = (f / 2) as f64;
            let angle = i as f64 / 10000f64.powf(2.0 * c / padded as f64);
            data.push(if f % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(&[len, width], data).expect("table shape")
}

/// Adds the sinusoidal table to `[batch, len, width]` sequences.
pub fn positional_encode(tape: &mut Tape, u: Var) -> Result<Var> {
    let s = tape.shape(u).to_vec();
    if s.len() < 2 {
        return Err(Error::shape("positional_encode", format!("{s:?}")));
    }
    let pe = tape.constant(positional_encoding(s[s.len() - 2], s[s.len() - 1]));
    tape.add(u, pe)
}

/// Scaled dot-product attention of `[batch, q, width]` queries over
/// `[batch, k, width]` keys and values, split into `heads` heads, with the
/// concatenated heads projected by `w_a`.
///
/// `keys` and `values` are the already projected `K` and `V`; `q` is the
/// projected query. Also returns each head's attention weights.
pub fn attend(
    tape: &mut Tape,
    q: Var,
    keys: Var,
    values: Var,
    w_a: Var,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let width = *tape.shape(q).last().unwrap_or(&0);
    if heads == 0 || width % heads != 0 {
        return Err(Error::Argument(format!("{heads} heads do not divide width {width}")));
    }
    let dk = width / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, keys, values)
        } else {
            (
                tape.narrow(q, 2, h * dk, dk)?,
                tape.narrow(keys, 2, h * dk, dk)?,
                tape.narrow(values, 2, h * dk, dk)?,
            )
        };
        let scores = tape.matmul_t(qh, kh, false, true)?;
        let scores = tape.scale(scores, scale)?;
        let alpha = tape.softmax(scores, None)?;
        outs.push(tape.matmul(alpha, vh)?);
        weights.push(alpha);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat(&outs, 2)? };
    Ok((tape.matmul(cat, w_a)?, weights))
}

/// Full (non-causal) multi-head self-attention over `[batch, len, width]`.
pub fn self_attention(tape: &mut Tape, u: Var, params: &AttentionParams<Var>, heads: usize) -> Result<Var> {
    Ok(self_attention_weights(tape, u, params, heads)?.0)
}

pub fn self_attention_weights(
    tape: &mut Tape,
    u: Var,
    params: &AttentionParams<Var>,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    if tape.shape(u).len() != 3 {
        return Err(Error::shape("self_attention", format!("expected [batch, len, width], got {:?}", tape.shape(u))));
    }
    let q = tape.matmul(u, params.w_q)?;
    let k = tape.matmul(u, params.w_k)?;
    let v = tape.matmul(u, params.w_v)?;
    attend(tape, q, k, v, params.w_a, heads)
}

fn encoder_layer(tape: &mut Tape, x: Var, p: &EncoderLayerParams<Var>, heads: usize) -> Result<Var> {
    let a = self_attention(tape, x, &p.attn, heads)?;
    let y = tape.add(x, a)?;
    let y = tape.layer_norm(y, p.ln1_gamma, p.ln1_beta, LAYER_NORM_EPS)?;
    let h = tape.linear(y, p.w_ff1, Some(p.b_ff1))?;
    let h = tape.relu(h)?;
    let f = tape.linear(h, p.w_ff2, Some(p.b_ff2))?;
    let z = tape.add(y, f)?;
    tape.layer_norm(z, p.ln2_gamma, p.ln2_beta, LAYER_NORM_EPS)
}

/// Positional encoding followed by the encoder layers, each
/// `LN(x + MHA(x))` then `LN(y + FF(y))`.
pub fn transformer_encode(
    tape: &mut Tape,
    u: Var,
    params: &EncoderParams<Var>,
    heads: usize,
    with_position: bool,
) -> Result<Var> {
    if params.layers.is_empty() {
        return Err(Error::Argument("encoder needs at least one layer".into()));
    }
    let mut x = if with_position { positional_encode(tape, u)? } else { u };
    for layer in &params.layers {
        x = encoder_layer(tape, x, layer, heads)?;
    }
    Ok(x)
}

/// `G_j = local_j + super`, with `local` as `[N, len, width]` and the super
/// sequence `[1, len, width]` broadcast over nodes.
pub fn aggregate(tape: &mut Tape, local: Var, super_seq: Var) -> Result<Var> {
    let (sl, ss) = (tape.shape(local).to_vec(), tape.shape(super_seq).to_vec());
    if sl.len() != 3 || ss.len() != 3 || ss[0] != 1 || sl[1..] != ss[1..] {
        return Err(Error::shape("aggregate", format!("local {sl:?} with super {ss:?}")));
    }
    tape.add(local, super_seq)
}
