//! Dense tensors, reverse-mode differentiation, loss, and optimizer.

mod adam;
mod gemm;
mod gradcheck;
mod init;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_all, relative_error};
pub use init::{seeded_rng, xavier_uniform, Rng};
pub use tape::{Gradients, Mask, Tape, Var};
pub use tensor::{Tensor, MAX_DIMS};

use crate::error::{Error, Result};

/// Probabilities of `logits` via max-subtracted exponentials.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Mean over elements of the Huber penalty on `pred - target`.
pub fn huber_loss(pred: &Tensor, target: &Tensor, delta: f64) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "huber_loss",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    if !(delta > 0.0) {
        return Err(Error::Argument(format!("huber delta must be positive, got {delta}")));
    }
    if pred.is_empty() {
        return Err(Error::Argument("huber loss of empty tensors".into()));
    }
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let r = (p - t).abs();
            if r <= delta {
                0.5 * r * r
            } else {
                delta * (r - 0.5 * delta)
            }
        })
        .sum();
    Ok(total / pred.len() as f64)
}
