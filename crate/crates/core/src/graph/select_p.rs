use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numeric::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    /// Probe errors closer than this count as equal.
    pub threshold: f64,
    /// Offset of the verification probes around the candidate.
    pub epsilon: f64,
    /// Number of bracket perturbations before giving up on verification.
    pub max_restarts: usize,
    /// Bisection steps per attempt.
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions {
            threshold: 1e-3,
            epsilon: 0.5,
            max_restarts: 5,
            max_steps: 40,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub p: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub p: f64,
    /// Whether the final candidate passed the `p +/- epsilon` check.
    pub verified: bool,
    pub probes: Vec<Probe>,
}

/// Bracketing search for the `p` minimizing a quasi-convex validation error.
///
/// Starting from `[0, 100]`, compares the errors at the midpoints of the two
/// half brackets and keeps the half with the lower one until those errors
/// agree within `threshold`. The candidate is accepted once the errors at
/// `p - epsilon` and `p + epsilon` also agree; otherwise the bracket is widened
/// by random amounts in `[0, 50]` on each side and the search repeats. If
/// verification never passes, the best probed `p` is returned unverified.
pub fn select_p(mut eval: impl FnMut(f64) -> Result<f64>, opts: &SelectOptions) -> Result<Selection> {
    let mut rng = seeded_rng(opts.seed);
    let mut probes: Vec<Probe> = Vec::new();
    let mut probe = |p: f64, probes: &mut Vec<Probe>| -> Result<f64> {
        if let Some(hit) = probes.iter().find(|x| x.p == p) {
            return Ok(hit.error);
        }
        let error = eval(p)?;
        probes.push(Probe { p, error });
        Ok(error)
    };

    let (mut lo, mut hi) = (0.0f64, 100.0f64);
    for _ in 0..=opts.max_restarts {
        let mut p = (lo + hi) / 2.0;
        for _ in 0..opts.max_steps {
            let right = probe((p + hi) / 2.0, &mut probes)?;
            let left = probe((lo + p) / 2.0, &mut probes)?;
            if (right - left).abs() < opts.threshold {
                break;
            }
            if right < left {
                lo = p;
            } else {
                hi = p;
            }
            p = (lo + hi) / 2.0;
        }
        let below = probe((p - opts.epsilon).max(0.0), &mut probes)?;
        let above = probe((p + opts.epsilon).min(100.0), &mut probes)?;
        if (above - below).abs() < opts.threshold {
            return Ok(Selection {
                p,
                verified: true,
                probes,
            });
        }
        lo = (lo - rng.random_range(0.0..=50.0)).max(0.0);
        hi = (hi + rng.random_range(0.0..=50.0)).min(100.0);
    }
    let best = probes
        .iter()
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .map(|b| b.p)
        .unwrap_or(50.0);
    Ok(Selection {
        p: best,
        verified: false,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn convex_bowl_at_fifty() {
        let s = select_p(|p| Ok((p - 50.0).powi(2)), &SelectOptions::default()).unwrap();
        assert!((s.p - 50.0).abs() <= 2.0, "{}", s.p);
        assert!(s.verified);
    }

    #[test]
    fn constant_error_returns_midpoint() {
        let s = select_p(|_| Ok(3.0), &SelectOptions::default()).unwrap();
        assert_eq!(s.p, 50.0);
        // two half-bracket probes plus two verification probes
        assert_eq!(s.probes.len(), 4);
    }

    #[test]
    fn noisy_bowl_at_seventy() {
        for seed in 0..10u64 {
            let mut rng = seeded_rng(1000 + seed);
            let opts = SelectOptions {
                threshold: 1.0,
                seed,
                ..SelectOptions::default()
            };
            let s = select_p(|p| Ok((p - 70.0).powi(2) + rng.random_range(-0.1..0.1)), &opts).unwrap();
            assert!((s.p - 70.0).abs() <= 5.0, "seed {seed}: {}", s.p);
        }
    }

    #[test]
    fn eval_errors_propagate() {
        let r = select_p(|_| Err(Error::Numerical("boom".into())), &SelectOptions::default());
        assert!(r.is_err());
    }
}
