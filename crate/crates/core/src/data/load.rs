//! Dataset readers.
//!
//! `generic-csv`: header `interval,node,ch0,ch1,...`, one row per (interval, node),
//! intervals 0-based and contiguous, every node present in every interval.
//!
//! `abilene-tm` / `geant-tm`: either a directory holding one whitespace-separated
//! `N x N` demand matrix per file, ordered by the last integer in the file name
//! (`tm.0.txt`, `tm.1.txt`, ...; indices must be contiguous), or a single file
//! with one interval per line as `N * N` row-major values. An optional
//! `nodes.txt` in the directory gives node labels, one per line. Each matrix
//! is reduced per node to outgoing (row sum, channel 0) and incoming
//! (column sum, channel 1) traffic.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::series::{default_labels, TrafficSeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    AbileneTm,
    GeantTm,
    GenericCsv,
}

impl DatasetFormat {
    pub fn interval_minutes(self) -> f64 {
        match self {
            DatasetFormat::AbileneTm => 5.0,
            DatasetFormat::GeantTm => 15.0,
            DatasetFormat::GenericCsv => 5.0,
        }
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abilene-tm" => Ok(DatasetFormat::AbileneTm),
            "geant-tm" => Ok(DatasetFormat::GeantTm),
            "generic-csv" => Ok(DatasetFormat::GenericCsv),
            other => Err(Error::Argument(format!(
                "unknown dataset format {other:?} (expected abilene-tm, geant-tm or generic-csv)"
            ))),
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<TrafficSeries> {
    match format {
        DatasetFormat::GenericCsv => load_generic_csv(path),
        tm => load_traffic_matrices(path, tm.interval_minutes()),
    }
}

pub fn load_generic_csv(path: &Path) -> Result<TrafficSeries> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_generic_csv(file)
}

pub fn parse_generic_csv(reader: impl std::io::Read) -> Result<TrafficSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Data(format!("csv header: {e}")))?.clone();
    if header.len() < 3 || &header[0] != "interval" || &header[1] != "node" {
        return Err(Error::Data(format!(
            "csv header must be `interval,node,ch0,...`, got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let channels: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let d = channels.len();

    let mut node_index: HashMap<String, usize> = HashMap::new();
    let mut nodes: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<Option<Vec<f64>>>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("csv row {}: {e}", line + 2)))?;
        let bad = |what: &str| Error::Data(format!("csv row {}: bad {what}", line + 2));
        let t: usize = rec[0].parse().map_err(|_| bad("interval"))?;
        let node = rec[1].to_string();
        let values: Vec<f64> = (2..2 + d)
            .map(|c| rec.get(c).and_then(|v| v.parse().ok()).ok_or_else(|| bad("value")))
            .collect::<Result<_>>()?;
        let j = match node_index.get(&node) {
            Some(&j) => j,
            None => {
                if rows.len() > 1 || t > 0 {
                    return Err(Error::Data(format!("csv row {}: unknown node label {node:?}", line + 2)));
                }
                nodes.push(node.clone());
                node_index.insert(node, nodes.len() - 1);
                nodes.len() - 1
            }
        };
        if rows.len() <= t {
            rows.resize(t + 1, Vec::new());
        }
        let slot = &mut rows[t];
        if slot.len() <= j {
            slot.resize(j + 1, None);
        }
        if slot[j].replace(values).is_some() {
            return Err(Error::Data(format!("csv row {}: duplicate interval {t}", line + 2)));
        }
    }
    let n = nodes.len();
    let mut flat = Vec::with_capacity(rows.len() * n * d);
    for (t, row) in rows.into_iter().enumerate() {
        if row.is_empty() {
            return Err(Error::Data(format!("missing interval {t}")));
        }
        for j in 0..n {
            let v = row
                .get(j)
                .and_then(Option::as_ref)
                .ok_or_else(|| Error::Data(format!("interval {t}: no row for node {:?}", nodes[j])))?;
            flat.extend_from_slice(v);
        }
    }
    if flat.is_empty() {
        return Err(Error::Data("csv has no data rows".into()));
    }
    TrafficSeries::new(DatasetFormat::GenericCsv.interval_minutes(), nodes, channels, flat)
}

fn parse_numbers(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Data(format!("{what}: bad number {t:?}")))
        })
        .collect()
}

fn trailing_index(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    let digits: Vec<&str> = name.split(|c: char| !c.is_ascii_digit()).filter(|s| !s.is_empty()).collect();
    digits.last()?.parse().ok()
}

pub fn load_traffic_matrices(path: &Path, interval_minutes: f64) -> Result<TrafficSeries> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let (matrices, labels) = if meta.is_dir() {
        read_matrix_dir(path)?
    } else {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut matrices = Vec::new();
        for (t, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            matrices.push(parse_numbers(line, &format!("interval {t}"))?);
        }
        (matrices, None)
    };
    reduce_matrices(matrices, labels, interval_minutes)
}

fn read_matrix_dir(dir: &Path) -> Result<(Vec<Vec<f64>>, Option<Vec<String>>)> {
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    let mut labels = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if !p.is_file() {
            continue;
        }
        if p.file_name().is_some_and(|n| n == "nodes.txt") {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            labels = Some(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect());
            continue;
        }
        let idx = trailing_index(&p)
            .ok_or_else(|| Error::Data(format!("{}: no interval index in file name", p.display())))?;
        files.push((idx, p));
    }
    files.sort();
    let base = files.first().map_or(0, |f| f.0);
    let mut matrices = Vec::with_capacity(files.len());
    for (k, (idx, p)) in files.iter().enumerate() {
        if *idx != base + k {
            return Err(Error::Data(format!("missing interval {}", k)));
        }
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        matrices.push(parse_numbers(&text, &format!("interval {k}"))?);
    }
    Ok((matrices, labels))
}

/// Row sums to channel 0 (out), column sums to channel 1 (in).
fn reduce_matrices(
    matrices: Vec<Vec<f64>>,
    labels: Option<Vec<String>>,
    interval_minutes: f64,
) -> Result<TrafficSeries> {
    let first = matrices.first().ok_or_else(|| Error::Data("no traffic matrices found".into()))?;
    let n = (first.len() as f64).sqrt().round() as usize;
    if n * n != first.len() || n == 0 {
        return Err(Error::Data(format!("interval 0: {} values is not a square matrix", first.len())));
    }
    let labels = labels.unwrap_or_else(|| default_labels("", n));
    if labels.len() != n {
        return Err(Error::Data(format!("nodes.txt lists {} labels for {n} nodes", labels.len())));
    }
    let mut values = Vec::with_capacity(matrices.len() * n * 2);
    for (t, m) in matrices.iter().enumerate() {
        if m.len() != n * n {
            return Err(Error::Data(format!("interval {t}: expected {} values, got {}", n * n, m.len())));
        }
        for j in 0..n {
            let out: f64 = m[j * n..(j + 1) * n].iter().sum();
            let inn: f64 = (0..n).map(|i| m[i * n + j]).sum();
            values.push(out);
            values.push(inn);
        }
    }
    TrafficSeries::new(interval_minutes, labels, vec!["out".into(), "in".into()], values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generic_csv_toy_shape() {
        let mut text = String::from("interval,node,ch0,ch1\n");
        for t in 0..10 {
            for node in ["a", "b"] {
                text.push_str(&format!("{t},{node},{},{}\n", t, t * 2));
            }
        }
        let s = parse_generic_csv(text.as_bytes()).unwrap();
        assert_eq!((s.intervals(), s.nodes(), s.channels()), (10, 2, 2));
        assert_eq!(s.get(3, 1, 1), 6.0);
        assert_eq!(s.node_labels, vec!["a", "b"]);
    }

    #[test]
    fn generic_csv_gap_names_the_interval() {
        let text = "interval,node,ch0\n0,a,1\n2,a,1\n";
        let err = parse_generic_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("interval 1"), "{err}");
    }

    #[test]
    fn generic_csv_unknown_node_and_bad_header() {
        let text = "interval,node,ch0\n0,a,1\n1,a,1\n1,b,2\n";
        assert!(parse_generic_csv(text.as_bytes()).unwrap_err().to_string().contains("unknown node"));
        assert!(parse_generic_csv("t,node,ch0\n0,a,1\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_reduction_row_and_column_sums() {
        let m = vec![vec![0.0, 1.0, 2.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]];
        let s = reduce_matrices(m, None, 5.0).unwrap();
        assert_eq!((s.intervals(), s.nodes(), s.channels()), (2, 2, 2));
        // node 0: out = 0 + 1, in = 0 + 2
        assert_eq!((s.get(0, 0, 0), s.get(0, 0, 1)), (1.0, 2.0));
        assert_eq!((s.get(0, 1, 0), s.get(0, 1, 1)), (2.0, 1.0));
    }

    #[test]
    fn matrix_directory_with_gap_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for i in [0, 1, 3] {
            fs::write(dir.path().join(format!("tm.{i}.txt")), "1 2\n3 4\n").unwrap();
        }
        let err = load_traffic_matrices(dir.path(), 5.0).unwrap_err().to_string();
        assert!(err.contains("missing interval 2"), "{err}");
        fs::write(dir.path().join("tm.2.txt"), "1 2\n3 4\n").unwrap();
        fs::write(dir.path().join("nodes.txt"), "x\ny\n").unwrap();
        let s = load_traffic_matrices(dir.path(), 5.0).unwrap();
        assert_eq!(s.intervals(), 4);
        assert_eq!(s.node_labels, vec!["x", "y"]);
    }
}
