#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netsight_core::data::TrafficSeries;

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_netsight"));
    cmd.env_remove("NETSIGHT_SEED");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Writes `series` in the generic-csv layout.
pub fn write_csv(series: &TrafficSeries, path: &Path) {
    let mut s = String::from("interval,node");
    for c in &series.channel_labels {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for t in 0..series.intervals() {
        for (n, label) in series.node_labels.iter().enumerate() {
            s.push_str(&format!("{t},{label}"));
            for c in 0..series.channels() {
                s.push_str(&format!(",{}", series.get(t, n, c)));
            }
            s.push('\n');
        }
    }
    std::fs::write(path, s).unwrap();
}

pub fn write_ring(labels: &[String], path: &Path) {
    let n = labels.len();
    let s: String = (0..n).map(|i| format!("{} {}\n", labels[i], labels[(i + 1) % n])).collect();
    std::fs::write(path, s).unwrap();
}

/// Dataset, topology and a small JSON run config inside `dir`.
pub fn small_run(dir: &Path, extra: &str) -> PathBuf {
    let series = netsight_core::data::synthetic::coupled_sinusoids(3, 120, 0.01, 3);
    write_csv(&series, &dir.join("data.csv"));
    write_ring(&series.node_labels, &dir.join("topo.txt"));
    let config = dir.join("run.json");
    std::fs::write(
        &config,
        format!(
            r#"{{"dataset": "data.csv", "topology": "topo.txt", "tau": 6, "tau_out": 3, "hidden": 8, "d_ff": 8,
"blocks": 1, "encoder_layers": 1, "gat_heads": 1, "attention_heads": 2, "max_epochs": 2{extra}}}"#
        ),
    )
    .unwrap();
    config
}
