use std::ops::Range;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Per-node traffic measurements, stored interval-major as `[intervals, nodes, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSeries {
    pub interval_minutes: f64,
    pub node_labels: Vec<String>,
    pub channel_labels: Vec<String>,
    values: Vec<f64>,
}

impl TrafficSeries {
    pub fn new(
        interval_minutes: f64,
        node_labels: Vec<String>,
        channel_labels: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let per = node_labels.len() * channel_labels.len();
        if per == 0 {
            return Err(Error::Data("series needs at least one node and one channel".into()));
        }
        if values.len() % per != 0 {
            return Err(Error::Data(format!(
                "{} values do not tile {} nodes x {} channels",
                values.len(),
                node_labels.len(),
                channel_labels.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            let t = i / per;
            return Err(Error::Data(format!(
                "interval {t}: traffic must be finite and nonnegative, got {}",
                values[i]
            )));
        }
        Ok(TrafficSeries {
            interval_minutes,
            node_labels,
            channel_labels,
            values,
        })
    }

    /// Builds a series from `rows[interval][node][channel]` with generated labels.
    pub fn from_nested(rows: Vec<Vec<Vec<f64>>>, interval_minutes: f64) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        let d = rows.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n * d);
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != n || row.iter().any(|c| c.len() != d) {
                return Err(Error::Data(format!("interval {t}: ragged node/channel layout")));
            }
            values.extend(row.into_iter().flatten());
        }
        Self::new(interval_minutes, default_labels("n", n), default_labels("ch", d), values)
    }

    pub fn intervals(&self) -> usize {
        self.values.len() / (self.nodes() * self.channels())
    }

    pub fn nodes(&self) -> usize {
        self.node_labels.len()
    }

    pub fn channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, t: usize, node: usize, ch: usize) -> f64 {
        self.values[(t * self.nodes() + node) * self.channels() + ch]
    }

    pub fn channel_series(&self, node: usize, ch: usize) -> Vec<f64> {
        (0..self.intervals()).map(|t| self.get(t, node, ch)).collect()
    }

    /// Contiguous sub-range of intervals.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start > range.end || range.end > self.intervals() {
            return Err(Error::Argument(format!(
                "interval range {range:?} outside 0..{}",
                self.intervals()
            )));
        }
        let per = self.nodes() * self.channels();
        Ok(TrafficSeries {
            interval_minutes: self.interval_minutes,
            node_labels: self.node_labels.clone(),
            channel_labels: self.channel_labels.clone(),
            values: self.values[range.start * per..range.end * per].to_vec(),
        })
    }

    /// Intervals `range` as a `[len, nodes, channels]` tensor.
    pub fn tensor(&self, range: Range<usize>) -> Tensor {
        let per = self.nodes() * self.channels();
        Tensor::new(
            &[range.len(), self.nodes(), self.channels()],
            self.values[range.start * per..range.end * per].to_vec(),
        )
        .expect("range checked by caller")
    }
}

pub(crate) fn default_labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}
