use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use netsight_core::data::{load_dataset, window_starts, TrafficSeries};
use netsight_core::eval::{
    congestion_baseline, congestion_grid, detect_congestion, error_accumulation, evaluate as score, model_forecaster,
    run_ablation, sweep_p, ACCUMULATION_MULTIPLES,
};
use netsight_core::graph::{select_p, SelectOptions, SpatialAdjacency};
use netsight_core::model::Variant;
use netsight_core::pipeline::{forecast_windows, Checkpoint, PreparedData, TrainConfig, Trainer};
use netsight_core::{Error, Result};

use crate::{AblateArgs, AccumulateArgs, CheckpointArgs, PredictArgs, RunArgs, SweepArgs};

const SEED_VAR: &str = "NETSIGHT_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// Config file, then `--set` overrides, then path flags, then the seed variable.
/// Relative paths inside a config file are taken from the file's directory.
fn resolve_config(a: &RunArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let mut cfg = TrainConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new(""));
            let rebase = |p: &mut Option<String>| {
                if let Some(s) = p.as_mut() {
                    if Path::new(s.as_str()).is_relative() {
                        *s = base.join(s.as_str()).display().to_string();
                    }
                }
            };
            rebase(&mut cfg.dataset);
            rebase(&mut cfg.topology);
            rebase(&mut cfg.out);
            cfg
        }
        None => TrainConfig::default(),
    };
    if !a.set.is_empty() {
        let mut text: String = cfg.to_key_values().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        for s in &a.set {
            if !s.contains('=') {
                return Err(Error::Argument(format!("--set expects KEY=VALUE, got {s:?}")));
            }
            text.push_str(s);
            text.push('\n');
        }
        cfg = TrainConfig::parse(&text)?;
    }
    if let Some(p) = &a.dataset {
        cfg.dataset = Some(p.display().to_string());
    }
    if let Some(p) = &a.topology {
        cfg.topology = Some(p.display().to_string());
    }
    if let Some(p) = &a.out {
        cfg.out = Some(p.display().to_string());
    }
    if let Ok(seed) = std::env::var(SEED_VAR) {
        cfg.seed = seed
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("{SEED_VAR} must be an unsigned integer, got {seed:?}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &TrainConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(
        cfg.out
            .as_deref()
            .ok_or_else(|| Error::Argument("no output directory: pass --out or set `out`".into()))?,
    );
    create_dir(&dir)?;
    Ok(dir)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_config(path: &Path, cfg: &TrainConfig) -> Result<()> {
    write(path, serde_json::to_string_pretty(cfg).expect("config serializes") + "\n")
}

fn load_series(cfg: &TrainConfig) -> Result<TrafficSeries> {
    let path = cfg
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Argument("no dataset: pass --dataset or set `dataset`".into()))?;
    load_dataset(Path::new(path), cfg.format)
}

fn load_inputs(cfg: &TrainConfig) -> Result<(TrafficSeries, SpatialAdjacency)> {
    let series = load_series(cfg)?;
    let spatial = match &cfg.topology {
        Some(path) => SpatialAdjacency::read_edge_list(Path::new(path), &series.node_labels)?,
        None => SpatialAdjacency::empty(series.nodes()),
    };
    Ok((series, spatial))
}

pub fn build_graph(a: &RunArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    let dir = out_dir(&cfg)?;
    let (series, spatial) = load_inputs(&cfg)?;
    let data = PreparedData::prepare(&series, &spatial, &cfg)?;
    data.adjacency.write(&dir.join("adjacency.txt"))?;
    write_config(&dir.join("config.json"), &cfg)?;
    eprintln!(
        "graph over {} nodes, density {:.4}, threshold {}, fitted on intervals {:?}",
        data.adjacency.n,
        data.adjacency.density(),
        data.adjacency.threshold,
        data.ranges[0]
    );
    Ok(())
}

pub fn train(a: &RunArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    let dir = out_dir(&cfg)?;
    let (series, spatial) = load_inputs(&cfg)?;
    let data = PreparedData::prepare(&series, &spatial, &cfg)?;
    let mut trainer = Trainer::new(&data, &cfg)?;
    while !trainer.should_stop() {
        let r = trainer.run_epoch()?;
        if r.epoch == 1 || r.epoch % 10 == 0 {
            eprintln!("epoch {:>5}  train {:.6e}  val {:.6e}", r.epoch, r.train_loss, r.val_loss);
        }
    }
    let outcome = trainer.finish();
    eprintln!(
        "best validation loss {:.6e} at epoch {} of {}",
        outcome.best_val_loss,
        outcome.best_epoch,
        outcome.history.len()
    );
    let metrics = if data.test_starts().is_empty() {
        None
    } else {
        Some(score(&outcome.model, &data.stats, &series, data.test_starts())?)
    };

    // The output location is not part of the model.
    let stored = TrainConfig { out: None, ..cfg.clone() };
    let ck = Checkpoint::from_outcome(&stored, &data, outcome);
    ck.save(&dir.join("checkpoint.ckpt"))?;
    let mut history = String::from("epoch,train_loss,val_loss\n");
    for r in &ck.history {
        writeln!(history, "{},{},{}", r.epoch, r.train_loss, r.val_loss).unwrap();
    }
    write(&dir.join("history.csv"), history)?;
    data.adjacency.write(&dir.join("adjacency.txt"))?;
    if let Some(m) = metrics {
        write(&dir.join("metrics.csv"), m.to_csv())?;
        write(&dir.join("metrics.json"), m.to_json() + "\n")?;
    }
    write_config(&dir.join("config.json"), &cfg)
}

struct Opened {
    ck: Checkpoint,
    series: TrafficSeries,
    ranges: [Range<usize>; 3],
    config: TrainConfig,
}

fn open_checkpoint(path: &Path, dataset: Option<&Path>) -> Result<Opened> {
    let ck = Checkpoint::load(path)?;
    let mut config = ck.config.clone();
    if let Some(d) = dataset {
        config.dataset = Some(d.display().to_string());
    }
    let series = load_series(&config)?;
    let mc = &ck.model.config;
    if series.nodes() != mc.nodes || series.channels() != mc.channels {
        return Err(Error::Data(format!(
            "dataset has {} nodes x {} channels, checkpoint expects {} x {}",
            series.nodes(),
            series.channels(),
            mc.nodes,
            mc.channels
        )));
    }
    let ranges = config.split().ranges(series.intervals())?;
    Ok(Opened {
        ck,
        series,
        ranges,
        config,
    })
}

fn split_starts(range: &Range<usize>, tau: usize, steps: usize, stride: usize) -> Result<Vec<usize>> {
    Ok(window_starts(range.len(), tau, steps, stride)?
        .into_iter()
        .map(|s| s + range.start)
        .collect())
}

fn sibling_config(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "forecast".into());
    out.with_file_name(format!("{stem}.config.json"))
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let o = open_checkpoint(&a.checkpoint, a.dataset.as_deref())?;
    let model = &o.ck.model;
    let steps = a.horizon.unwrap_or(model.config.tau_out);
    if a.stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let starts = split_starts(&o.ranges[a.split.index()], model.config.tau, steps, a.stride)?;
    let forecasts = forecast_windows(model, &o.ck.stats, &o.series, &starts, steps)?;

    let mut csv = String::from("window,step,node,channel,predicted,actual\n");
    let (n, d) = (model.config.nodes, model.config.channels);
    for f in &forecasts {
        for step in 0..steps {
            for node in 0..n {
                for ch in 0..d {
                    let i = (step * n + node) * d + ch;
                    let actual = f.actual.as_ref().map(|t| t.data()[i].to_string()).unwrap_or_default();
                    writeln!(
                        csv,
                        "{},{},{},{},{},{}",
                        f.start,
                        step + 1,
                        o.ck.node_labels[node],
                        o.ck.channel_labels[ch],
                        f.predicted.data()[i],
                        actual
                    )
                    .unwrap();
                }
            }
        }
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(&a.out, csv)?;
    write_config(&sibling_config(&a.out), &o.config)
}

pub fn evaluate(a: &CheckpointArgs) -> Result<()> {
    let o = open_checkpoint(&a.checkpoint, a.dataset.as_deref())?;
    let model = &o.ck.model;
    create_dir(&a.out)?;
    let starts = split_starts(&o.ranges[a.split.index()], model.config.tau, model.config.tau_out, 1)?;
    let report = score(model, &o.ck.stats, &o.series, &starts)?;
    eprintln!(
        "MAE {:.4}  RMSE {:.4}  SMAPE {:.2}% over {} windows",
        report.aggregate.mae, report.aggregate.rmse, report.aggregate.smape, report.windows
    );
    write(&a.out.join("metrics.csv"), report.to_csv())?;
    write(&a.out.join("metrics.json"), report.to_json() + "\n")?;
    write_config(&a.out.join("config.json"), &o.config)
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = resolve_config(&a.run)?;
    let dir = out_dir(&cfg)?;
    let (series, spatial) = load_inputs(&cfg)?;
    let variants = if a.variants.is_empty() { Variant::ALL.to_vec() } else { a.variants.clone() };
    let mut table = String::from("variant,best_val_loss,best_epoch,epochs,mae,rmse,smape\n");
    for v in variants {
        eprintln!("training {v}");
        let run = run_ablation(v, &series, &spatial, &cfg)?;
        let m = run.metrics.as_ref().map(|r| r.aggregate);
        let cell = |f: fn(&netsight_core::eval::Metrics) -> f64| m.as_ref().map(|m| f(m).to_string()).unwrap_or_default();
        writeln!(
            table,
            "{},{},{},{},{},{},{}",
            v,
            run.outcome.best_val_loss,
            run.outcome.best_epoch,
            run.outcome.history.len(),
            cell(|m| m.mae),
            cell(|m| m.rmse),
            cell(|m| m.smape)
        )
        .unwrap();
        let mut history = String::from("epoch,train_loss,val_loss\n");
        for r in &run.outcome.history {
            writeln!(history, "{},{},{}", r.epoch, r.train_loss, r.val_loss).unwrap();
        }
        write(&dir.join(format!("history_{v}.csv")), history)?;
    }
    write(&dir.join("ablation.csv"), table)?;
    write_config(&dir.join("config.json"), &cfg)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = resolve_config(&a.run)?;
    let dir = out_dir(&cfg)?;
    let (series, spatial) = load_inputs(&cfg)?;
    let rows = sweep_p(&series, &spatial, &cfg, &a.p)?;
    let mut table = String::from("p,density,best_val_loss,mae,rmse,smape\n");
    for r in &rows {
        let m = r.metrics.as_ref().map(|m| m.aggregate);
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            table,
            "{},{},{},{},{},{}",
            r.p,
            r.density,
            r.best_val_loss,
            cell(m.map(|m| m.mae)),
            cell(m.map(|m| m.rmse)),
            cell(m.map(|m| m.smape))
        )
        .unwrap();
    }
    write(&dir.join("sweep.csv"), table)?;

    if a.select {
        let base = PreparedData::prepare(&series, &spatial, &cfg)?;
        let opts = SelectOptions {
            seed: cfg.seed,
            ..SelectOptions::default()
        };
        let selection = select_p(
            |p| {
                // The filter needs p strictly inside (0, 100).
                let p = p.clamp(0.5, 99.5);
                let data = base.with_p(p, cfg.rescale_temporal)?;
                let run_cfg = TrainConfig { p, ..cfg.clone() };
                Ok(Trainer::new(&data, &run_cfg)?.run()?.best_val_loss)
            },
            &opts,
        )?;
        eprintln!("selected p = {} (verified: {})", selection.p, selection.verified);
        write(
            &dir.join("selection.json"),
            serde_json::to_string_pretty(&selection).expect("selection serializes") + "\n",
        )?;
    }
    write_config(&dir.join("config.json"), &cfg)
}

pub fn congestion(a: &CheckpointArgs) -> Result<()> {
    let o = open_checkpoint(&a.checkpoint, a.dataset.as_deref())?;
    let model = &o.ck.model;
    create_dir(&a.out)?;
    let baseline = congestion_baseline(&o.series.slice(o.ck.fitted_on.clone())?)?;
    let starts = split_starts(&o.ranges[a.split.index()], model.config.tau, model.config.tau_out, 1)?;
    let forecasts = forecast_windows(model, &o.ck.stats, &o.series, &starts, model.config.tau_out)?;
    let mut table = String::from("alpha,accuracy\n");
    for alpha in congestion_grid() {
        let mut sum = 0.0;
        for f in &forecasts {
            let actual = f.actual.as_ref().expect("windows lie inside the series");
            sum += detect_congestion(&f.predicted, actual, &baseline, alpha)?;
        }
        writeln!(table, "{alpha},{}", sum / forecasts.len() as f64).unwrap();
    }
    write(&a.out.join("congestion.csv"), table)?;
    write_config(&a.out.join("config.json"), &o.config)
}

pub fn accumulate(a: &AccumulateArgs) -> Result<()> {
    let o = open_checkpoint(&a.ck.checkpoint, a.ck.dataset.as_deref())?;
    let model = &o.ck.model;
    create_dir(&a.ck.out)?;
    let range = &o.ranges[a.ck.split.index()];
    let block = a.block.unwrap_or(range.len() / 10).max(model.config.tau_out);
    let forecaster = model_forecaster(model, &o.ck.stats, &o.series)?;
    let table = error_accumulation(
        forecaster,
        &o.series,
        model.config.tau,
        model.config.tau_out,
        range.start,
        block,
        &ACCUMULATION_MULTIPLES,
    )?;
    if let Some(w) = &table.warning {
        eprintln!("warning: {w}");
    }
    let mut csv = String::from("multiple,block_start,block_end,windows,smape\n");
    for r in &table.rows {
        writeln!(csv, "{},{},{},{},{}", r.multiple, r.block_start, r.block_end, r.windows, r.smape).unwrap();
    }
    write(&a.ck.out.join("accumulation.csv"), csv)?;
    write(
        &a.ck.out.join("accumulation.json"),
        serde_json::to_string_pretty(&table).expect("table serializes") + "\n",
    )?;
    write_config(&a.ck.out.join("config.json"), &o.config)
}
