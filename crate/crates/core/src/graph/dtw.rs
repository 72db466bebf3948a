//! Dynamic time warping with absolute-difference local cost.

use crate::error::{Error, Result};

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("dtw of an empty sequence".into()));
    }
    Ok(())
}

/// Full `O(len(a) * len(b))` dynamic program over steps {down, right, diagonal}.
pub fn exact_dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                left.min(diag).min(prev[j])
            };
            cur[j] = best + (x - y).abs();
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// Inclusive column range `[lo, hi]` searched in each row.
#[derive(Debug, Clone)]
struct Window {
    ranges: Vec<(usize, usize)>,
}

impl Window {
    fn full(rows: usize, cols: usize) -> Self {
        Window {
            ranges: vec![(0, cols - 1); rows],
        }
    }
}

/// DTW restricted to `window`; returns the cost and the optimal path.
fn windowed_dtw(a: &[f64], b: &[f64], window: &Window) -> (f64, Vec<(usize, usize)>) {
    let (n, m) = (a.len(), b.len());
    let mut cost = vec![f64::INFINITY; n * m];
    for i in 0..n {
        let (lo, hi) = window.ranges[i];
        for j in lo..=hi.min(m - 1) {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { cost[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { cost[i * m + j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    cost[(i - 1) * m + j - 1]
                } else {
                    f64::INFINITY
                };
                up.min(left).min(diag)
            };
            cost[i * m + j] = best + (a[i] - b[j]).abs();
        }
    }
    let total = cost[n * m - 1];

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let at = |r: usize, c: usize| cost[r * m + c];
        let step = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = at(i - 1, j - 1);
            let up = at(i - 1, j);
            let left = at(i, j - 1);
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        (i, j) = step;
        path.push(step);
    }
    path.reverse();
    (total, path)
}

/// Halves resolution by averaging adjacent pairs; an odd tail stays alone.
fn coarsen(x: &[f64]) -> Vec<f64> {
    x.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

/// Projects a coarse path onto the finer grid and widens it by `radius` cells.
fn expand_window(path: &[(usize, usize)], rows: usize, cols: usize, radius: usize) -> Window {
    let mut ranges = vec![(usize::MAX, 0usize); rows];
    let mut mark = |r: usize, c_lo: usize, c_hi: usize| {
        let e = &mut ranges[r];
        e.0 = e.0.min(c_lo);
        e.1 = e.1.max(c_hi);
    };
    for &(ci, cj) in path {
        for fi in 2 * ci..(2 * ci + 2).min(rows) {
            let r_lo = fi.saturating_sub(radius);
            let r_hi = (fi + radius).min(rows - 1);
            let c_lo = (2 * cj).saturating_sub(radius);
            let c_hi = (2 * cj + 1 + radius).min(cols - 1);
            for r in r_lo..=r_hi {
                mark(r, c_lo, c_hi);
            }
        }
    }
    // Every row is covered: the coarse path spans all coarse rows.
    Window { ranges }
}

fn fast_dtw_path(a: &[f64], b: &[f64], radius: usize) -> (f64, Vec<(usize, usize)>) {
    let min_size = radius + 2;
    if a.len() <= min_size || b.len() <= min_size {
        return windowed_dtw(a, b, &Window::full(a.len(), b.len()));
    }
    let (_, coarse_path) = fast_dtw_path(&coarsen(a), &coarsen(b), radius);
    let window = expand_window(&coarse_path, a.len(), b.len(), radius);
    windowed_dtw(a, b, &window)
}

/// Multi-resolution approximate DTW: solve at half resolution, project the
/// warping path back, and refine inside a band of half-width `radius`.
///
/// A single coarsen-project-refine pass is not monotone in the radius (a wider
/// band at a coarse level can steer the projected path somewhere worse), so
/// the result is the cheapest pass over radii `1..=radius`. That keeps the
/// value non-increasing in `radius`, never below [`exact_dtw`], and equal to
/// it once `radius >= max(len(a), len(b))`.
pub fn fast_dtw(a: &[f64], b: &[f64], radius: usize) -> Result<f64> {
    check(a, b)?;
    if radius == 0 {
        return Err(Error::Argument("fast_dtw radius must be at least 1".into()));
    }
    let mut best = f64::INFINITY;
    for r in 1..=radius {
        let (cost, _) = fast_dtw_path(a, b, r);
        best = best.min(cost);
        if a.len().max(b.len()) <= r + 2 {
            break;
        }
    }
    Ok(best)
}

/// Averages consecutive blocks so the result has at most `max_points` values.
pub fn block_average(x: &[f64], max_points: usize) -> Vec<f64> {
    if max_points == 0 || x.len() <= max_points {
        return x.to_vec();
    }
    let block = x.len().div_ceil(max_points);
    x.chunks(block).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::numeric::seeded_rng;

    /// Minimum over every monotone warping path, enumerated recursively.
    fn brute_force(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
            let here = (a[i] - b[j]).abs();
            if i + 1 == a.len() && j + 1 == b.len() {
                return here;
            }
            let mut best = f64::INFINITY;
            if i + 1 < a.len() {
                best = best.min(go(a, b, i + 1, j));
            }
            if j + 1 < b.len() {
                best = best.min(go(a, b, i, j + 1));
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                best = best.min(go(a, b, i + 1, j + 1));
            }
            here + best
        }
        go(a, b, 0, 0)
    }

    fn random_int_seq(rng: &mut crate::numeric::Rng, max_len: usize) -> Vec<f64> {
        let len = rng.random_range(1..=max_len);
        (0..len).map(|_| f64::from(rng.random_range(-5i32..=5))).collect()
    }

    #[test]
    fn exact_examples() {
        assert_eq!(exact_dtw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(exact_dtw(&[0.0], &[5.0]).unwrap(), 5.0);
        let (a, b) = ([1.0, 2.0, 3.0], [1.0, 2.0, 2.0, 3.0]);
        assert_eq!(brute_force(&a, &b), 0.0);
        assert_eq!(exact_dtw(&a, &b).unwrap(), 0.0);
        assert!(exact_dtw(&[], &[1.0]).is_err());
        assert!(fast_dtw(&[1.0], &[], 3).is_err());
    }

    #[test]
    fn exact_matches_brute_force() {
        let mut rng = seeded_rng(5);
        for _ in 0..200 {
            let a = random_int_seq(&mut rng, 6);
            let b = random_int_seq(&mut rng, 6);
            assert_eq!(exact_dtw(&a, &b).unwrap(), brute_force(&a, &b), "{a:?} {b:?}");
        }
    }

    #[test]
    fn full_band_equals_exact() {
        let mut rng = seeded_rng(9);
        for _ in 0..50 {
            let a = random_int_seq(&mut rng, 32);
            let b = random_int_seq(&mut rng, 32);
            let r = a.len().max(b.len());
            assert_eq!(fast_dtw(&a, &b, r).unwrap(), exact_dtw(&a, &b).unwrap());
        }
    }

    #[test]
    fn identical_sequences_cost_nothing_at_any_radius() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        for r in 1..5 {
            assert_eq!(fast_dtw(&a, &a, r).unwrap(), 0.0);
        }
    }

    #[test]
    fn banded_cost_shrinks_toward_exact_as_radius_grows() {
        let mut rng = seeded_rng(21);
        for _ in 0..100 {
            let a: Vec<f64> = (0..rng.random_range(20..80)).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..rng.random_range(20..80)).map(|_| rng.random_range(0.0..1.0)).collect();
            let exact = exact_dtw(&a, &b).unwrap();
            let mut prev = f64::INFINITY;
            for r in 1..=6 {
                let c = fast_dtw(&a, &b, r).unwrap();
                assert!(c >= exact - 1e-12);
                assert!(c <= prev + 1e-12, "radius {r}: {c} > {prev}");
                prev = c;
            }
        }
    }

    #[test]
    fn block_average_bounds_length() {
        let x: Vec<f64> = (0..5000).map(f64::from).collect();
        let y = block_average(&x, 2048);
        assert!(y.len() <= 2048);
        assert_eq!(block_average(&x[..10], 2048), x[..10].to_vec());
    }

    proptest! {
        #[test]
        fn exact_is_symmetric_and_zero_on_self(
            a in prop::collection::vec(-10i32..10, 1..24),
            b in prop::collection::vec(-10i32..10, 1..24),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            prop_assert_eq!(exact_dtw(&a, &b).unwrap(), exact_dtw(&b, &a).unwrap());
            prop_assert_eq!(exact_dtw(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn fast_never_underestimates(
            a in prop::collection::vec(-10i32..10, 1..48),
            b in prop::collection::vec(-10i32..10, 1..48),
            radius in 1usize..6,
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            prop_assert!(fast_dtw(&a, &b, radius).unwrap() >= exact_dtw(&a, &b).unwrap());
        }
    }
}
