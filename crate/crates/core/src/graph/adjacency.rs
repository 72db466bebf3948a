use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dtw::{block_average, fast_dtw};
use crate::data::TrafficSeries;
use crate::error::{Error, Result};

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            values: vec![0.0; n * n],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).flat_map(move |i| (0..self.n).filter(move |&j| j != i).map(move |j| self.get(i, j)))
    }
}

/// Physical topology: `1` where two nodes are direct neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAdjacency(pub Matrix);

impl SpatialAdjacency {
    pub fn empty(n: usize) -> Self {
        SpatialAdjacency(Matrix::zeros(n))
    }

    /// Undirected adjacency from `(a, b)` index pairs; self-loops are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut m = Matrix::zeros(n);
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Data(format!("edge ({a}, {b}) outside {n} nodes")));
            }
            if a != b {
                m.set(a, b, 1.0);
                m.set(b, a, 1.0);
            }
        }
        Ok(SpatialAdjacency(m))
    }

    /// Reads an edge list of `nodeA nodeB` label pairs, one per line.
    ///
    /// Blank lines and lines starting with `#` are skipped.
    pub fn read_edge_list(path: &Path, labels: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text, labels)
    }

    pub fn parse_edge_list(text: &str, labels: &[String]) -> Result<Self> {
        let lookup = |name: &str, line: usize| {
            labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::Data(format!("topology line {line}: unknown node label {name:?}")))
        };
        let mut edges = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Data(format!(
                    "topology line {}: expected `nodeA nodeB`, got {line:?}",
                    ln + 1
                )));
            }
            edges.push((lookup(fields[0], ln + 1)?, lookup(fields[1], ln + 1)?));
        }
        Self::from_edges(labels.len(), &edges)
    }
}

/// Pairwise similarity `1 / max(D, eps)` from channel-averaged DTW distances.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalAdjacency {
    pub similarity: Matrix,
    /// Pairs whose distance fell below the floor, i.e. maximally similar.
    pub capped: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DtwScaling {
    /// Use raw traffic values.
    None,
    /// Min-max rescale each node's channel to `[0, 1]` before alignment.
    #[default]
    PerNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalOptions {
    pub radius: usize,
    pub distance_floor: f64,
    pub max_points: usize,
    pub scaling: DtwScaling,
}

impl Default for TemporalOptions {
    fn default() -> Self {
        TemporalOptions {
            radius: 8,
            distance_floor: 1e-8,
            max_points: 2048,
            scaling: DtwScaling::PerNode,
        }
    }
}

/// Channel-averaged fast-DTW similarity between every node pair of `series`.
///
/// Pairs are computed for `j < k` and mirrored; the diagonal is left at zero
/// and never consulted downstream.
pub fn temporal_adjacency(series: &TrafficSeries, opts: &TemporalOptions) -> Result<TemporalAdjacency> {
    let (n, d) = (series.nodes(), series.channels());
    if n < 2 {
        return Err(Error::Argument(format!("temporal adjacency needs at least 2 nodes, got {n}")));
    }
    if series.intervals() == 0 {
        return Err(Error::Argument("temporal adjacency of an empty series".into()));
    }
    if !(opts.distance_floor > 0.0) {
        return Err(Error::Argument("distance floor must be positive".into()));
    }
    let prepared: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|j| {
            (0..d)
                .map(|c| {
                    let mut s = series.channel_series(j, c);
                    if opts.scaling == DtwScaling::PerNode {
                        let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let range = (hi - lo).max(1e-8);
                        s.iter_mut().for_each(|v| *v = (*v - lo) / range);
                    }
                    block_average(&s, opts.max_points)
                })
                .collect()
        })
        .collect();

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect();
    let distances: Vec<f64> = pairs
        .par_iter()
        .map(|&(j, k)| {
            let mut total = 0.0;
            for c in 0..d {
                total += fast_dtw(&prepared[j][c], &prepared[k][c], opts.radius)?;
            }
            Ok(total / d as f64)
        })
        .collect::<Result<_>>()?;

    let mut similarity = Matrix::zeros(n);
    let mut capped = vec![false; n * n];
    for (&(j, k), &dist) in pairs.iter().zip(&distances) {
        let floored = dist < opts.distance_floor;
        let s = 1.0 / dist.max(opts.distance_floor);
        for (a, b) in [(j, k), (k, j)] {
            similarity.set(a, b, s);
            capped[a * n + b] = floored;
        }
    }
    Ok(TemporalAdjacency { similarity, capped })
}

/// Binary spatio-temporal adjacency after top-p filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedAdjacency {
    pub matrix: Vec<bool>,
    pub n: usize,
    pub p: f64,
    pub threshold: f64,
}

/// Linear-interpolation percentile `q` in `[0, 100]` of unsorted `values`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (rank - lo as f64)
}

/// Adds spatial and temporal adjacency and keeps the top `p` percent of
/// off-diagonal entries (ties at the threshold are kept).
///
/// With `rescale_temporal`, similarities are divided by their off-diagonal
/// maximum first so both terms live on `[0, 1]`.
pub fn fuse_and_filter(
    spatial: &SpatialAdjacency,
    temporal: &TemporalAdjacency,
    p: f64,
    rescale_temporal: bool,
) -> Result<FusedAdjacency> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::Argument(format!("p must lie in (0, 100), got {p}")));
    }
    let n = spatial.0.n;
    if temporal.similarity.n != n {
        return Err(Error::shape("fuse_and_filter", format!("{n} vs {} nodes", temporal.similarity.n)));
    }
    if n < 2 {
        return Err(Error::Argument("fusion needs at least 2 nodes".into()));
    }
    if temporal.similarity.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("temporal adjacency".into()));
    }
    let scale = if rescale_temporal {
        let max = temporal.similarity.off_diagonal().fold(0.0, f64::max);
        if max > 0.0 { 1.0 / max } else { 1.0 }
    } else {
        1.0
    };
    let mut raw = Matrix::zeros(n);
    for i in 0..n * n {
        raw.values[i] = spatial.0.values[i] + scale * temporal.similarity.values[i];
    }
    let off: Vec<f64> = raw.off_diagonal().collect();
    let threshold = percentile(&off, 100.0 - p);
    let mut matrix = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            matrix[i * n + j] = i == j || raw.get(i, j) >= threshold || raw.get(j, i) >= threshold;
        }
    }
    Ok(FusedAdjacency {
        matrix,
        n,
        p,
        threshold,
    })
}

impl FusedAdjacency {
    /// Neighbors of each node plus a self-loop.
    pub fn with_self_loops(spatial: &SpatialAdjacency) -> Self {
        let n = spatial.0.n;
        let matrix = (0..n * n)
            .map(|i| i / n == i % n || spatial.0.values[i] != 0.0)
            .collect();
        FusedAdjacency {
            matrix,
            n,
            p: 0.0,
            threshold: 1.0,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.matrix[i * self.n + j]
    }

    /// Fraction of off-diagonal entries set.
    pub fn density(&self) -> f64 {
        let n = self.n;
        let ones = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j))
            .count();
        ones as f64 / (n * (n - 1)) as f64
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Text form: a `N p threshold` header line followed by `N` rows of 0/1.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.n, self.p, self.threshold);
        for i in 0..self.n {
            let row: Vec<&str> = (0..self.n).map(|j| if self.get(i, j) { "1" } else { "0" }).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Data("empty adjacency file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let bad = |what: &str| Error::Data(format!("adjacency header {header:?}: bad {what}"));
        if fields.len() != 3 {
            return Err(bad("field count"));
        }
        let n: usize = fields[0].parse().map_err(|_| bad("N"))?;
        let p: f64 = fields[1].parse().map_err(|_| bad("p"))?;
        let threshold: f64 = fields[2].parse().map_err(|_| bad("threshold"))?;
        let mut matrix = Vec::with_capacity(n * n);
        for r in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data(format!("adjacency file: missing row {r}")))?;
            let row: Vec<bool> = line
                .split_whitespace()
                .map(|t| match t {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(Error::Data(format!("adjacency row {r}: bad entry {other:?}"))),
                })
                .collect::<Result<_>>()?;
            if row.len() != n {
                return Err(Error::Data(format!("adjacency row {r}: {} entries, expected {n}", row.len())));
            }
            matrix.extend(row);
        }
        if lines.next().is_some() {
            return Err(Error::Data("adjacency file: trailing rows".into()));
        }
        Ok(FusedAdjacency {
            matrix,
            n,
            p,
            threshold,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::numeric::seeded_rng;

    fn temporal_from(n: usize, f: impl Fn(usize, usize) -> f64) -> TemporalAdjacency {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m.set(i, j, f(i.min(j), i.max(j)));
                }
            }
        }
        TemporalAdjacency {
            similarity: m,
            capped: vec![false; n * n],
        }
    }

    fn series(rows: Vec<Vec<Vec<f64>>>) -> TrafficSeries {
        TrafficSeries::from_nested(rows, 5.0).unwrap()
    }

    #[test]
    fn identical_series_hit_the_floor() {
        // intervals x nodes x channels
        let s = series((0..6).map(|i| vec![vec![i as f64], vec![i as f64]]).collect());
        let opts = TemporalOptions {
            scaling: DtwScaling::None,
            ..TemporalOptions::default()
        };
        let t = temporal_adjacency(&s, &opts).unwrap();
        assert_eq!(t.similarity.get(0, 1), 1e8);
        assert!(t.capped[1]);
    }

    #[test]
    fn constant_offset_series_distance() {
        let s = series((0..3).map(|_| vec![vec![0.0], vec![1.0]]).collect());
        let opts = TemporalOptions {
            scaling: DtwScaling::None,
            ..TemporalOptions::default()
        };
        let t = temporal_adjacency(&s, &opts).unwrap();
        assert!((t.similarity.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(t.similarity.get(1, 0), t.similarity.get(0, 1));
    }

    #[test]
    fn channel_distances_are_averaged() {
        // Channel 0 differs by 2 at one step, channel 1 by 4: D = (2 + 4) / 2.
        let s = series(vec![
            vec![vec![0.0, 0.0], vec![2.0, 4.0]],
        ]);
        let opts = TemporalOptions {
            scaling: DtwScaling::None,
            ..TemporalOptions::default()
        };
        let t = temporal_adjacency(&s, &opts).unwrap();
        assert!((t.similarity.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn temporal_needs_two_nodes() {
        let s = series(vec![vec![vec![1.0]]]);
        assert!(temporal_adjacency(&s, &TemporalOptions::default()).is_err());
    }

    #[test]
    fn hand_percentile_keeps_only_strongest_pair() {
        let t = temporal_from(3, |i, j| match (i, j) {
            (0, 1) => 0.1,
            (0, 2) => 0.2,
            _ => 0.9,
        });
        let f = fuse_and_filter(&SpatialAdjacency::empty(3), &t, 33.0, false).unwrap();
        assert!(f.get(1, 2) && f.get(2, 1));
        assert!(!f.get(0, 1) && !f.get(0, 2));
        assert!((0..3).all(|i| f.get(i, i)));
    }

    #[test]
    fn ties_are_all_retained() {
        let t = temporal_from(5, |_, _| 0.7);
        let f = fuse_and_filter(&SpatialAdjacency::empty(5), &t, 30.0, false).unwrap();
        assert_eq!(f.density(), 1.0);
    }

    #[test]
    fn p_out_of_range_is_rejected() {
        let t = temporal_from(3, |_, _| 1.0);
        for p in [0.0, 100.0, -3.0, 120.0] {
            assert!(fuse_and_filter(&SpatialAdjacency::empty(3), &t, p, false).is_err());
        }
    }

    fn random_instance(rng: &mut crate::numeric::Rng, n: usize) -> (SpatialAdjacency, TemporalAdjacency) {
        let vals: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..5.0)).collect();
        let t = temporal_from(n, |i, j| vals[i * n + j]);
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        (SpatialAdjacency::from_edges(n, &edges).unwrap(), t)
    }

    #[test]
    fn density_tracks_p_on_random_inputs() {
        let mut rng = seeded_rng(17);
        for trial in 0..30 {
            let n = 20;
            let (s, t) = random_instance(&mut rng, n);
            let p = [20.0, 50.0, 80.0][trial % 3];
            let f = fuse_and_filter(&s, &t, p, trial % 2 == 0).unwrap();
            let tol = 1.0 / (n * (n - 1)) as f64;
            assert!((f.density() - p / 100.0).abs() <= tol + 1e-12, "p {p}: {}", f.density());
            assert!(f.is_symmetric());
            assert!((0..n).all(|i| f.get(i, i)));
        }
    }

    #[test]
    fn symmetric_pairs_quantize_density_in_steps_of_two() {
        // Mirrored entries enter and leave together, so the kept count is even.
        let mut rng = seeded_rng(29);
        for n in 3..16 {
            let (s, t) = random_instance(&mut rng, n);
            for p in [10.0, 33.0, 50.0, 71.0] {
                let f = fuse_and_filter(&s, &t, p, false).unwrap();
                let tol = 2.0 / (n * (n - 1)) as f64;
                assert!((f.density() - p / 100.0).abs() <= tol + 1e-12, "n {n} p {p}: {}", f.density());
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let t = temporal_from(4, |i, j| (i * 4 + j) as f64 * 0.37);
        let f = fuse_and_filter(&SpatialAdjacency::empty(4), &t, 50.0, false).unwrap();
        let back = FusedAdjacency::from_text(&f.to_text()).unwrap();
        assert_eq!(back, f);
        assert!(FusedAdjacency::from_text("2 50 0.1\n1 0\n").is_err());
        assert!(FusedAdjacency::from_text("2 50 0.1\n1 0\n0 2\n").is_err());
    }

    #[test]
    fn edge_list_rejects_unknown_labels() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let s = SpatialAdjacency::parse_edge_list("# ring\na b\nb c\n", &labels).unwrap();
        assert_eq!(s.0.get(1, 0), 1.0);
        assert_eq!(s.0.get(0, 2), 0.0);
        assert!(SpatialAdjacency::parse_edge_list("a z\n", &labels).is_err());
        assert!(SpatialAdjacency::parse_edge_list("a b c\n", &labels).is_err());
    }
}
