use std::ops::Range;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::data::{extract_window, window_starts, NormStats, TrafficSeries};
use crate::error::{Error, Result};
use crate::graph::{fuse_and_filter, temporal_adjacency, FusedAdjacency, SpatialAdjacency, TemporalAdjacency};
use crate::model::{NetSight, Variant};
use crate::numeric::{seeded_rng, Adam, AdamState, Rng, Tensor};

/// Separates the shuffling stream from parameter initialization.
const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// A series made ready for training: split, normalized with training
/// statistics, and paired with the graph built from the training split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub series: TrafficSeries,
    pub stats: NormStats,
    /// Whole series normalized, `[intervals, N, d]`.
    pub normalized: Tensor,
    pub ranges: [Range<usize>; 3],
    pub spatial: SpatialAdjacency,
    /// `None` when the variant does not use temporal similarity.
    pub temporal: Option<TemporalAdjacency>,
    pub adjacency: FusedAdjacency,
    pub tau: usize,
    pub tau_out: usize,
    /// Absolute window starts for train, validation and test.
    pub starts: [Vec<usize>; 3],
}

impl PreparedData {
    pub fn prepare(series: &TrafficSeries, spatial: &SpatialAdjacency, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if spatial.0.n != series.nodes() {
            return Err(Error::Data(format!(
                "topology has {} nodes, series has {}",
                spatial.0.n,
                series.nodes()
            )));
        }
        let ranges = config.split().ranges(series.intervals())?;
        let train = series.slice(ranges[0].clone())?;
        let stats = NormStats::fit(&train)?;
        let normalized = stats.apply(series)?;
        let temporal = if config.variant == Variant::NoAst {
            None
        } else {
            Some(temporal_adjacency(&train, &config.temporal_options())?)
        };
        let adjacency = build_adjacency(spatial, temporal.as_ref(), config.p, config.rescale_temporal)?;

        let split_starts = |r: &Range<usize>| -> Vec<usize> {
            window_starts(r.len(), config.tau, config.tau_out, config.stride)
                .map(|s| s.into_iter().map(|w| w + r.start).collect())
                .unwrap_or_default()
        };
        let starts = [split_starts(&ranges[0]), split_starts(&ranges[1]), split_starts(&ranges[2])];
        if starts[0].is_empty() {
            return Err(Error::Data(format!(
                "training split of {} intervals is shorter than one window ({} + {})",
                ranges[0].len(),
                config.tau,
                config.tau_out
            )));
        }
        Ok(PreparedData {
            series: series.clone(),
            stats,
            normalized,
            ranges,
            spatial: spatial.clone(),
            temporal,
            adjacency,
            tau: config.tau,
            tau_out: config.tau_out,
            starts,
        })
    }

    /// Refilters the fused graph at a new `p` without recomputing DTW.
    pub fn with_p(&self, p: f64, rescale_temporal: bool) -> Result<Self> {
        let mut next = self.clone();
        next.adjacency = build_adjacency(&self.spatial, self.temporal.as_ref(), p, rescale_temporal)?;
        Ok(next)
    }

    pub fn train_starts(&self) -> &[usize] {
        &self.starts[0]
    }

    pub fn val_starts(&self) -> &[usize] {
        &self.starts[1]
    }

    pub fn test_starts(&self) -> &[usize] {
        &self.starts[2]
    }

    /// Normalized `(input, target)` of the window starting at `start`.
    pub fn window(&self, start: usize) -> (Tensor, Tensor) {
        let w = extract_window(&self.normalized, start, self.tau, self.tau_out);
        (w.input, w.target)
    }
}

fn build_adjacency(
    spatial: &SpatialAdjacency,
    temporal: Option<&TemporalAdjacency>,
    p: f64,
    rescale_temporal: bool,
) -> Result<FusedAdjacency> {
    match temporal {
        Some(t) => fuse_and_filter(spatial, t, p, rescale_temporal),
        None => Ok(FusedAdjacency::with_self_loops(spatial)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Best-validation model and the full loss history of a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NetSight,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mini-batch Adam on the Huber loss with early stopping on validation loss.
///
/// Per-window gradients are computed in parallel but summed in window
/// order, so results do not depend on the thread count.
pub struct Trainer<'a> {
    data: &'a PreparedData,
    config: TrainConfig,
    model: NetSight,
    adam: Adam,
    rng: Rng,
    history: Vec<EpochRecord>,
    best: Option<(usize, f64, NetSight, AdamState)>,
    since_best: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a PreparedData, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if (config.tau, config.tau_out) != (data.tau, data.tau_out) {
            return Err(Error::Argument("config window lengths differ from the prepared data".into()));
        }
        let model_config = config.model_config(data.series.nodes(), data.series.channels());
        let model = NetSight::new(model_config, &data.adjacency, config.seed)?;
        Ok(Self::resume(data, config, model, None))
    }

    /// Continues from an existing model and optimizer state.
    pub fn resume(data: &'a PreparedData, config: &TrainConfig, model: NetSight, adam: Option<AdamState>) -> Self {
        let adam = Adam {
            config: config.adam(),
            state: adam.unwrap_or_else(|| AdamState::zeros_like(&model.params.tensors)),
        };
        Trainer {
            data,
            config: config.clone(),
            model,
            adam,
            rng: seeded_rng(config.seed ^ SHUFFLE_STREAM),
            history: Vec::new(),
            best: None,
            since_best: 0,
        }
    }

    pub fn model(&self) -> &NetSight {
        &self.model
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epoch(&self) -> usize {
        self.history.len()
    }

    pub fn should_stop(&self) -> bool {
        self.epoch() >= self.config.max_epochs || self.since_best >= self.config.patience.max(1)
    }

    /// One pass over shuffled training windows followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch() + 1;
        let mut order = self.data.train_starts().to_vec();
        order.shuffle(&mut self.rng);

        let mut total = 0.0;
        for (batch, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let results: Vec<Result<(f64, Vec<Tensor>)>> = chunk
                .par_iter()
                .map(|&start| {
                    let (input, target) = self.data.window(start);
                    self.model.loss_and_grad(&input, &target, self.config.huber_delta)
                })
                .collect();
            let mut sum_loss = 0.0;
            let mut grads: Option<Vec<Tensor>> = None;
            for r in results {
                let (loss, g) = r.map_err(|e| self.diagnose(epoch, batch, &e.to_string()))?;
                if !loss.is_finite() {
                    return Err(self.diagnose(epoch, batch, "loss is not finite"));
                }
                sum_loss += loss;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let k = 1.0 / chunk.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= k);
            }
            self.adam
                .step(&mut self.model.params.tensors, &grads)
                .map_err(|e| self.diagnose(epoch, batch, &e.to_string()))?;
            total += sum_loss;
        }
        let train_loss = total / order.len() as f64;
        let val_loss = if self.data.val_starts().is_empty() {
            train_loss
        } else {
            mean_loss(&self.model, self.data, self.data.val_starts(), self.config.huber_delta)?
        };
        if !val_loss.is_finite() {
            return Err(self.diagnose(epoch, 0, "validation loss is not finite"));
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
        };
        self.history.push(record);
        let improved = self.best.as_ref().is_none_or(|b| val_loss < b.1);
        if improved {
            self.best = Some((epoch, val_loss, self.model.clone(), self.adam.state.clone()));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Ok(record)
    }

    fn diagnose(&self, epoch: usize, batch: usize, what: &str) -> Error {
        let norm = self
            .model
            .params
            .tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        Error::Numerical(format!("epoch {epoch}, batch {batch}: {what} (parameter norm {norm:.6e})"))
    }

    /// Trains until early stopping or the epoch limit.
    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.should_stop() {
            self.run_epoch()?;
        }
        Ok(self.finish())
    }

    /// Best-validation snapshot; the current model if no epoch has run.
    pub fn finish(self) -> TrainOutcome {
        let (best_epoch, best_val_loss, model, adam) = match self.best {
            Some(b) => b,
            None => (0, f64::INFINITY, self.model, self.adam.state),
        };
        TrainOutcome {
            model,
            adam,
            history: self.history,
            best_epoch,
            best_val_loss,
        }
    }
}

/// Mean Huber loss over the windows at `starts`.
pub fn mean_loss(model: &NetSight, data: &PreparedData, starts: &[usize], delta: f64) -> Result<f64> {
    if starts.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let losses: Vec<f64> = starts
        .par_iter()
        .map(|&s| {
            let (input, target) = data.window(s);
            model.loss(&input, &target, delta)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Forecast of one window in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub start: usize,
    /// `[steps, N, d]`
    pub predicted: Tensor,
    /// Observed values over the same steps, when the series covers them.
    pub actual: Option<Tensor>,
}

/// Runs `steps`-interval forecasts from every window start.
///
/// Inputs are normalized with `stats`; outputs are mapped back to the
/// original scale.
pub fn forecast_windows(
    model: &NetSight,
    stats: &NormStats,
    series: &TrafficSeries,
    starts: &[usize],
    steps: usize,
) -> Result<Vec<Forecast>> {
    let tau = model.config.tau;
    let normalized = stats.apply(series)?;
    starts
        .par_iter()
        .map(|&start| {
            if start + tau > series.intervals() {
                return Err(Error::Data(format!("window at {start} runs past the end of the series")));
            }
            let w = extract_window(&normalized, start, tau, 0);
            let pred = model.predict_steps(&w.input, steps)?;
            let end = start + tau + steps;
            let actual = (end <= series.intervals()).then(|| series.tensor(start + tau..end));
            Ok(Forecast {
                start,
                predicted: stats.invert(&pred),
                actual,
            })
        })
        .collect()
}

/// One row of a grid-search leaderboard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    /// Position in the candidate list.
    pub index: usize,
    pub config: TrainConfig,
    pub val_loss: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    /// Sorted by validation loss; failed candidates last.
    pub leaderboard: Vec<LeaderboardEntry>,
    /// Outcome of the best candidate, when it was trained in this call.
    pub best: Option<TrainOutcome>,
}

impl GridResult {
    pub fn best_config(&self) -> Option<&TrainConfig> {
        self.leaderboard.first().filter(|e| e.error.is_none()).map(|e| &e.config)
    }
}

/// Trains each candidate in turn and ranks them by best validation loss.
///
/// With a `journal`, each finished candidate is appended as one JSON line
/// and candidates already recorded there are skipped on a later call.
pub fn grid_search(
    candidates: &[TrainConfig],
    series: &TrafficSeries,
    spatial: &SpatialAdjacency,
    journal: Option<&std::path::Path>,
) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::Argument("grid search needs at least one candidate".into()));
    }
    let mut done: Vec<LeaderboardEntry> = Vec::new();
    if let Some(path) = journal.filter(|p| p.exists()) {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let entry: LeaderboardEntry =
                serde_json::from_str(line).map_err(|e| Error::Format(format!("grid journal: {e}")))?;
            if candidates.get(entry.index) == Some(&entry.config) {
                done.push(entry);
            }
        }
    }

    let mut best: Option<(f64, TrainOutcome)> = None;
    for (index, config) in candidates.iter().enumerate() {
        if done.iter().any(|e| e.index == index) {
            continue;
        }
        let result = PreparedData::prepare(series, spatial, config)
            .and_then(|data| Trainer::new(&data, config)?.run());
        let entry = match result {
            Ok(outcome) => {
                let entry = LeaderboardEntry {
                    index,
                    config: config.clone(),
                    val_loss: Some(outcome.best_val_loss),
                    epochs: outcome.history.len(),
                    error: None,
                };
                if best.as_ref().is_none_or(|(l, _)| outcome.best_val_loss < *l) {
                    best = Some((outcome.best_val_loss, outcome));
                }
                entry
            }
            Err(e) => LeaderboardEntry {
                index,
                config: config.clone(),
                val_loss: None,
                epochs: 0,
                error: Some(e.to_string()),
            },
        };
        if let Some(path) = journal {
            use std::io::Write;
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let line = serde_json::to_string(&entry).expect("entry serializes");
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        done.push(entry);
    }

    done.sort_by(|a, b| {
        let key = |e: &LeaderboardEntry| e.val_loss.filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
        key(a)
            .total_cmp(&key(b))
            .then(a.error.is_some().cmp(&b.error.is_some()))
            .then(a.index.cmp(&b.index))
    });
    let best = best
        .filter(|(l, _)| done.first().and_then(|e| e.val_loss) == Some(*l))
        .map(|(_, o)| o);
    Ok(GridResult { leaderboard: done, best })
}
