use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// MAE, RMSE and SMAPE (percent) over one set of cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub smape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Entry `h` covers forecast step `h + 1`.
    pub per_horizon: Vec<Metrics>,
    pub aggregate: Metrics,
    /// Windows averaged into the report.
    pub windows: usize,
}

/// Running sums for the three metrics, one slot per horizon step.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    shape: Option<Vec<usize>>,
    abs: Vec<f64>,
    sq: Vec<f64>,
    sym: Vec<f64>,
    count: Vec<usize>,
    windows: usize,
}

impl Default for MetricsAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl MetricsAccumulator {
    pub fn new() -> Self {
        MetricsAccumulator {
            shape: None,
            abs: Vec::new(),
            sq: Vec::new(),
            sym: Vec::new(),
            count: Vec::new(),
            windows: 0,
        }
    }

    /// Adds one `[steps, N, d]` forecast and its ground truth.
    pub fn add(&mut self, pred: &Tensor, truth: &Tensor) -> Result<()> {
        if pred.shape() != truth.shape() {
            return Err(Error::shape(
                "metrics",
                format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape()),
            ));
        }
        if pred.ndim() != 3 {
            return Err(Error::shape("metrics", format!("expected [steps, N, d], got {:?}", pred.shape())));
        }
        match &self.shape {
            Some(s) if s.as_slice() != pred.shape() => {
                return Err(Error::shape("metrics", format!("window {:?} after {:?}", pred.shape(), s)));
            }
            Some(_) => {}
            None => {
                let steps = pred.shape()[0];
                self.shape = Some(pred.shape().to_vec());
                self.abs = vec![0.0; steps];
                self.sq = vec![0.0; steps];
                self.sym = vec![0.0; steps];
                self.count = vec![0; steps];
            }
        }
        let per = pred.shape()[1] * pred.shape()[2];
        for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
            let h = i / per;
            let e = (t - p).abs();
            self.abs[h] += e;
            self.sq[h] += e * e;
            let denom = (t.abs() + p.abs()) / 2.0;
            if denom > 0.0 {
                self.sym[h] += e / denom;
            }
            self.count[h] += 1;
        }
        self.windows += 1;
        Ok(())
    }

    pub fn report(&self) -> Result<MetricsReport> {
        if self.windows == 0 {
            return Err(Error::Data("no forecasts to score".into()));
        }
        let finish = |abs: f64, sq: f64, sym: f64, n: usize| {
            let n = n as f64;
            Metrics {
                mae: abs / n,
                rmse: (sq / n).sqrt(),
                smape: 100.0 * sym / n,
            }
        };
        let per_horizon = (0..self.count.len())
            .map(|h| finish(self.abs[h], self.sq[h], self.sym[h], self.count[h]))
            .collect();
        let aggregate = finish(
            self.abs.iter().sum(),
            self.sq.iter().sum(),
            self.sym.iter().sum(),
            self.count.iter().sum(),
        );
        Ok(MetricsReport {
            per_horizon,
            aggregate,
            windows: self.windows,
        })
    }
}

/// Metrics of one forecast against its ground truth, both `[steps, N, d]`.
pub fn compute_metrics(pred: &Tensor, truth: &Tensor) -> Result<MetricsReport> {
    let mut acc = MetricsAccumulator::new();
    acc.add(pred, truth)?;
    acc.report()
}

impl MetricsReport {
    /// `metric,horizon,value` rows; the aggregate uses horizon `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,horizon,value\n");
        let mut rows = |h: &str, m: &Metrics| {
            for (name, v) in [("mae", m.mae), ("rmse", m.rmse), ("smape", m.smape)] {
                out.push_str(&format!("{name},{h},{v}\n"));
            }
        };
        for (h, m) in self.per_horizon.iter().enumerate() {
            rows(&(h + 1).to_string(), m);
        }
        rows("all", &self.aggregate);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
