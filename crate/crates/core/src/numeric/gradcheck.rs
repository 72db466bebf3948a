use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst element-wise relative error between the tape gradient of `f` at `x`
/// and central differences with step `eps`.
///
/// `f` builds a scalar on the given tape from the leaf holding `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.constant(point.clone());
        let out = f(&mut tape, leaf)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::shape("grad_check", format!("f returned {:?}", v.shape())));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    if !tape.value(out).item().is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let analytic = tape.backward(out)?.wrt(leaf);

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// [`grad_check`] over several inputs: each one in turn is perturbed while the
/// others stay fixed. Returns the worst error over all of them.
pub fn grad_check_all<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut worst: f64 = 0.0;
    for i in 0..xs.len() {
        let err = grad_check(
            |tape, leaf| {
                let vars: Vec<Var> = xs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| if j == i { leaf } else { tape.constant(x.clone()) })
                    .collect();
                f(tape, &vars)
            },
            &xs[i],
            eps,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}
