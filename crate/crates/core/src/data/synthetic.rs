//! Synthetic series with known structure, for tests and benchmarks.

use std::f64::consts::PI;

use rand::Rng as _;

use super::series::TrafficSeries;
use crate::graph::SpatialAdjacency;
use crate::numeric::seeded_rng;

/// `nodes` phase-shifted daily-like sinusoids (`10 + 5 sin`, period 24),
/// each also driven by its predecessor's previous value, with two channels
/// and multiplicative uniform noise of relative size `noise`.
pub fn coupled_sinusoids(nodes: usize, intervals: usize, noise: f64, seed: u64) -> TrafficSeries {
    let mut rng = seeded_rng(seed);
    let wave = |t: f64, node: usize| 10.0 + 5.0 * (2.0 * PI * (t + 3.0 * node as f64) / 24.0).sin();
    let rows = (0..intervals)
        .map(|t| {
            (0..nodes)
                .map(|i| {
                    let prev = (i + nodes - 1) % nodes;
                    let v = wave(t as f64, i) + 0.3 * wave(t as f64 - 1.0, prev);
                    (0..2)
                        .map(|c| v * (1.0 + 0.2 * c as f64) * (1.0 + noise * rng.random_range(-1.0..1.0)))
                        .collect()
                })
                .collect()
        })
        .collect();
    TrafficSeries::from_nested(rows, 5.0).expect("positive finite values")
}

/// Six nodes on a ring topology whose coupling the ring does not show.
///
/// Nodes 0 to 2 are independent AR(1) processes; node `i + 3` repeats node
/// `i` two intervals later at four times the scale. All nodes share a slow
/// common factor. The ring links `i` to `i + 1`, so each driver sits three
/// hops from the node it drives.
pub fn planted_coupling(intervals: usize, seed: u64) -> (TrafficSeries, SpatialAdjacency) {
    const N: usize = 6;
    let scales = [1.0, 1.0, 1.0, 4.0, 4.0, 4.0];
    let mut rng = seeded_rng(seed);
    let mut common_rng = seeded_rng(seed.wrapping_add(1000));
    let mut x = vec![[0.0f64; N]; intervals];
    let mut common = 0.0;
    let mut rows = Vec::with_capacity(intervals);
    for t in 0..intervals {
        common = 0.95 * common + 0.3 * common_rng.random_range(-1.0..1.0);
        for i in 0..N {
            x[t][i] = if i < 3 {
                let prev = if t > 0 { x[t - 1][i] } else { 0.0 };
                0.5 * prev + rng.random_range(-1.0..1.0)
            } else {
                let lagged = if t > 1 { x[t - 2][i - 3] } else { 0.0 };
                lagged + 0.05 * rng.random_range(-1.0..1.0)
            };
        }
        rows.push(
            (0..N)
                .map(|i| vec![(scales[i] * (5.0 + x[t][i] + common)).max(0.0)])
                .collect(),
        );
    }
    let ring: Vec<(usize, usize)> = (0..N).map(|i| (i, (i + 1) % N)).collect();
    (
        TrafficSeries::from_nested(rows, 5.0).expect("nonnegative finite values"),
        SpatialAdjacency::from_edges(N, &ring).expect("valid ring"),
    )
}
