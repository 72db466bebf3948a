use super::params::AttentionParams;
use super::temporal::attend;
use crate::error::{Error, Result};
use crate::numeric::{Tape, Var};

/// Growing joint representation `G` for every node, with its key and value
/// projections cached so each step projects only the newest row.
#[derive(Debug, Clone, Copy)]
pub struct PredictorState {
    /// `[N, rows, width]`
    pub g: Var,
    keys: Var,
    values: Var,
    rows: usize,
}

impl PredictorState {
    pub fn new(tape: &mut Tape, g: Var, attn: &AttentionParams<Var>) -> Result<Self> {
        let s = tape.shape(g).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("predict", format!("expected [N, rows, width], got {s:?}")));
        }
        if s[1] < 2 {
            return Err(Error::Argument(format!("prediction needs at least 2 rows in G, got {}", s[1])));
        }
        let keys = tape.matmul(g, attn.w_k)?;
        let values = tape.matmul(g, attn.w_v)?;
        Ok(PredictorState {
            g,
            keys,
            values,
            rows: s[1],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

/// One autoregressive step.
///
/// The query is the last row of `G`; keys and values are every earlier row,
/// or every row including the query when `include_query` is set. The latent
/// row (attention output projected by `w_a`) is appended to `G` and mapped
/// to channels by `w_out`, `b_out`. Returns `(latent, output)` shaped
/// `[N, 1, width]` and `[N, 1, channels]`.
pub fn predict_step(
    tape: &mut Tape,
    state: &mut PredictorState,
    attn: &AttentionParams<Var>,
    w_out: Var,
    b_out: Var,
    heads: usize,
    include_query: bool,
) -> Result<(Var, Var)> {
    let last = tape.narrow(state.g, 1, state.rows - 1, 1)?;
    let q = tape.matmul(last, attn.w_q)?;
    let visible = if include_query { state.rows } else { state.rows - 1 };
    let k = tape.narrow(state.keys, 1, 0, visible)?;
    let v = tape.narrow(state.values, 1, 0, visible)?;
    let (latent, _) = attend(tape, q, k, v, attn.w_a, heads)?;

    let lk = tape.matmul(latent, attn.w_k)?;
    let lv = tape.matmul(latent, attn.w_v)?;
    state.g = tape.concat(&[state.g, latent], 1)?;
    state.keys = tape.concat(&[state.keys, lk], 1)?;
    state.values = tape.concat(&[state.values, lv], 1)?;
    state.rows += 1;

    let out = tape.linear(latent, w_out, Some(b_out))?;
    Ok((latent, out))
}

/// Runs `steps` prediction steps from `g` (`[N, tau, width]`) and returns
/// the `[steps, N, channels]` outputs in the model's normalized scale.
pub fn predict_autoregressive(
    tape: &mut Tape,
    g: Var,
    steps: usize,
    attn: &AttentionParams<Var>,
    w_out: Var,
    b_out: Var,
    heads: usize,
    include_query: bool,
) -> Result<Var> {
    if steps == 0 {
        return Err(Error::Argument("prediction horizon must be at least 1".into()));
    }
    let mut state = PredictorState::new(tape, g, attn)?;
    let mut outs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (_, out) = predict_step(tape, &mut state, attn, w_out, b_out, heads, include_query)?;
        outs.push(out);
    }
    let all = tape.concat(&outs, 1)?;
    tape.swap_leading(all)
}
