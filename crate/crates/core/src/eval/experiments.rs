use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricsAccumulator, MetricsReport};
use crate::data::{NormStats, TrafficSeries};
use crate::error::{Error, Result};
use crate::graph::SpatialAdjacency;
use crate::model::{NetSight, Variant};
use crate::numeric::Tensor;
use crate::pipeline::{forecast_windows, PreparedData, TrainConfig, TrainOutcome, Trainer};

/// Scores `tau_out`-step forecasts from each start, in original units.
pub fn evaluate(model: &NetSight, stats: &NormStats, series: &TrafficSeries, starts: &[usize]) -> Result<MetricsReport> {
    let forecasts = forecast_windows(model, stats, series, starts, model.config.tau_out)?;
    let mut acc = MetricsAccumulator::new();
    for f in &forecasts {
        let actual = f.actual.as_ref().ok_or_else(|| Error::Data(format!("window at {} lacks ground truth", f.start)))?;
        acc.add(&f.predicted, actual)?;
    }
    acc.report()
}

/// One trained variant.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: Variant,
    pub outcome: TrainOutcome,
    /// Test-split metrics, absent when the split holds no full window.
    pub metrics: Option<MetricsReport>,
}

/// Trains `variant` with every other setting taken from `config`.
pub fn run_ablation(
    variant: Variant,
    series: &TrafficSeries,
    spatial: &SpatialAdjacency,
    config: &TrainConfig,
) -> Result<AblationRun> {
    let config = TrainConfig {
        variant,
        ..config.clone()
    };
    let data = PreparedData::prepare(series, spatial, &config)?;
    let outcome = Trainer::new(&data, &config)?.run()?;
    let metrics = if data.test_starts().is_empty() {
        None
    } else {
        Some(evaluate(&outcome.model, &data.stats, series, data.test_starts())?)
    };
    Ok(AblationRun {
        variant,
        outcome,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    /// Off-diagonal density of the fused graph.
    pub density: f64,
    pub best_val_loss: f64,
    pub metrics: Option<MetricsReport>,
}

/// Retrains with the fused graph filtered at each `p`. Temporal similarity
/// is computed once and reused.
pub fn sweep_p(series: &TrafficSeries, spatial: &SpatialAdjacency, config: &TrainConfig, ps: &[f64]) -> Result<Vec<SweepRow>> {
    if ps.len() < 2 {
        return Err(Error::Argument("a p sweep needs at least two values".into()));
    }
    if config.variant == Variant::NoAst {
        return Err(Error::Argument("the no_ast variant does not use p".into()));
    }
    let base = PreparedData::prepare(series, spatial, config)?;
    ps.iter()
        .map(|&p| {
            let data = base.with_p(p, config.rescale_temporal)?;
            let cfg = TrainConfig { p, ..config.clone() };
            let outcome = Trainer::new(&data, &cfg)?.run()?;
            let metrics = if data.test_starts().is_empty() {
                None
            } else {
                Some(evaluate(&outcome.model, &data.stats, series, data.test_starts())?)
            };
            Ok(SweepRow {
                p,
                density: data.adjacency.density(),
                best_val_loss: outcome.best_val_loss,
                metrics,
            })
        })
        .collect()
}

/// Congestion factors from 1.5 to 5.0 in steps of 0.5.
pub fn congestion_grid() -> Vec<f64> {
    (0..8).map(|i| 1.5 + 0.5 * i as f64).collect()
}

/// Mean traffic per node and channel over `history`, indexed `node * d + channel`.
pub fn congestion_baseline(history: &TrafficSeries) -> Result<Vec<f64>> {
    let t = history.intervals();
    if t == 0 {
        return Err(Error::Data("congestion baseline needs a non-empty history".into()));
    }
    let per = history.nodes() * history.channels();
    let mut sums = vec![0.0; per];
    for (i, v) in history.values().iter().enumerate() {
        sums[i % per] += v;
    }
    Ok(sums.into_iter().map(|s| s / t as f64).collect())
}

/// Fraction of cells where the forecast and the truth agree on whether the
/// value exceeds `alpha` times the cell's baseline.
///
/// `forecast` and `truth` are `[steps, N, d]`; `baseline` has `N * d` entries.
pub fn detect_congestion(forecast: &Tensor, truth: &Tensor, baseline: &[f64], alpha: f64) -> Result<f64> {
    if forecast.shape() != truth.shape() {
        return Err(Error::shape(
            "congestion",
            format!("forecast {:?} vs truth {:?}", forecast.shape(), truth.shape()),
        ));
    }
    let per = baseline.len();
    if per == 0 || truth.len() % per != 0 {
        return Err(Error::shape("congestion", format!("baseline of {per} for {:?}", truth.shape())));
    }
    let hits = forecast
        .data()
        .iter()
        .zip(truth.data())
        .enumerate()
        .filter(|(i, (f, t))| {
            let limit = alpha * baseline[i % per];
            (**f > limit) == (**t > limit)
        })
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulationRow {
    /// Block number `k`; the block covers `[origin + (k-1)T, origin + kT)`.
    pub multiple: usize,
    pub block_start: usize,
    pub block_end: usize,
    pub windows: usize,
    pub smape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccumulationTable {
    pub block_len: usize,
    pub rows: Vec<AccumulationRow>,
    /// Set when some requested blocks ran past the series.
    pub warning: Option<String>,
}

pub const ACCUMULATION_MULTIPLES: [usize; 5] = [1, 2, 3, 5, 10];

/// SMAPE on successive future blocks of `block_len` intervals after `origin`.
///
/// Every window whose target lies inside block `k` is scored; `forecast`
/// maps a window start to its `[tau_out, N, d]` forecast in original units.
pub fn error_accumulation(
    forecast: impl Fn(usize) -> Result<Tensor> + Sync,
    series: &TrafficSeries,
    tau: usize,
    tau_out: usize,
    origin: usize,
    block_len: usize,
    multiples: &[usize],
) -> Result<AccumulationTable> {
    if block_len < tau_out {
        return Err(Error::Argument(format!("block of {block_len} intervals cannot hold a {tau_out}-step target")));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &k in multiples {
        if k == 0 {
            return Err(Error::Argument("block multiples start at 1".into()));
        }
        let start = origin + (k - 1) * block_len;
        let end = start + block_len;
        if end > series.intervals() || start < tau {
            skipped.push(k);
            continue;
        }
        let starts: Vec<usize> = (start - tau..=end - tau - tau_out).collect();
        let preds: Vec<Tensor> = starts.par_iter().map(|&s| forecast(s)).collect::<Result<_>>()?;
        let mut acc = MetricsAccumulator::new();
        for (s, p) in starts.iter().zip(&preds) {
            acc.add(p, &series.tensor(s + tau..s + tau + tau_out))?;
        }
        rows.push(AccumulationRow {
            multiple: k,
            block_start: start,
            block_end: end,
            windows: starts.len(),
            smape: acc.report()?.aggregate.smape,
        });
    }
    let warning = (!skipped.is_empty()).then(|| {
        format!(
            "series of {} intervals too short for blocks {:?} of {block_len} after {origin}; table truncated",
            series.intervals(),
            skipped
        )
    });
    Ok(AccumulationTable {
        block_len,
        rows,
        warning,
    })
}

/// Forecast closure over a trained model for `error_accumulation`.
pub fn model_forecaster<'a>(
    model: &'a NetSight,
    stats: &'a NormStats,
    series: &'a TrafficSeries,
) -> Result<impl Fn(usize) -> Result<Tensor> + Sync + 'a> {
    let normalized = stats.apply(series)?;
    Ok(move |start: usize| {
        let w = crate::data::extract_window(&normalized, start, model.config.tau, 0);
        Ok(stats.invert(&model.predict(&w.input)?))
    })
}
