use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::series::TrafficSeries;
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Smallest channel range used when rescaling.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Per-channel min-max statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    pub fn fit(series: &TrafficSeries) -> Result<Self> {
        if series.intervals() == 0 {
            return Err(Error::Data("cannot fit normalization on an empty series".into()));
        }
        let d = series.channels();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for (i, &v) in series.values().iter().enumerate() {
            let c = i % d;
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
        let scale = lo.iter().zip(&hi).map(|(l, h)| (h - l).max(SCALE_FLOOR)).collect();
        Ok(NormStats { min: lo, scale })
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    /// Normalized copy of the whole series as a `[intervals, nodes, channels]` tensor.
    pub fn apply(&self, series: &TrafficSeries) -> Result<Tensor> {
        if series.channels() != self.channels() {
            return Err(Error::shape(
                "normalize",
                format!("{} channels vs {} fitted", series.channels(), self.channels()),
            ));
        }
        let mut t = series.tensor(0..series.intervals());
        let d = self.channels();
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = self.forward(i % d, *v);
        }
        Ok(t)
    }

    pub fn forward(&self, channel: usize, v: f64) -> f64 {
        (v - self.min[channel]) / self.scale[channel]
    }

    pub fn inverse(&self, channel: usize, v: f64) -> f64 {
        v * self.scale[channel] + self.min[channel]
    }

    /// Inverse transform of a tensor whose last axis is the channel axis.
    pub fn invert(&self, t: &Tensor) -> Tensor {
        let d = self.channels();
        let mut out = t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = self.inverse(i % d, *v);
        }
        out
    }
}

/// Chronological train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "split fractions must be in [0, 1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Interval ranges for train, validation and test, in that order.
    pub fn ranges(&self, intervals: usize) -> Result<[Range<usize>; 3]> {
        self.validate()?;
        let a = (self.train * intervals as f64).round() as usize;
        let b = ((self.train + self.val) * intervals as f64).round() as usize;
        let b = b.clamp(a, intervals);
        Ok([0..a, a..b, b..intervals])
    }
}

/// One sample: `input` covers `[start, start + tau)`, `target` the next `tau_out` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub start: usize,
    pub input: Tensor,
    pub target: Tensor,
}

/// Start offsets of every window with the given stride.
pub fn window_starts(intervals: usize, tau: usize, tau_out: usize, stride: usize) -> Result<Vec<usize>> {
    if tau == 0 || tau_out == 0 || stride == 0 {
        return Err(Error::Argument("tau, tau_out and stride must be positive".into()));
    }
    if intervals < tau + tau_out {
        return Err(Error::Data(format!(
            "series of {intervals} intervals is shorter than one window ({tau} + {tau_out})"
        )));
    }
    Ok((0..=intervals - tau - tau_out).step_by(stride).collect())
}

/// Slices a `[intervals, nodes, channels]` tensor into one window.
pub fn extract_window(data: &Tensor, start: usize, tau: usize, tau_out: usize) -> WindowBatch {
    let s = data.shape();
    let per = s[1] * s[2];
    let slab = |from: usize, len: usize| {
        Tensor::new(&[len, s[1], s[2]], data.data()[from * per..(from + len) * per].to_vec())
            .expect("window inside series")
    };
    WindowBatch {
        start,
        input: slab(start, tau),
        target: slab(start + tau, tau_out),
    }
}

pub fn make_windows(data: &Tensor, tau: usize, tau_out: usize, stride: usize) -> Result<Vec<WindowBatch>> {
    if data.ndim() != 3 {
        return Err(Error::shape("make_windows", format!("expected [T, N, d], got {:?}", data.shape())));
    }
    Ok(window_starts(data.shape()[0], tau, tau_out, stride)?
        .into_iter()
        .map(|w| extract_window(data, w, tau, tau_out))
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn series(rows: Vec<Vec<Vec<f64>>>) -> TrafficSeries {
        TrafficSeries::from_nested(rows, 5.0).unwrap()
    }

    #[test]
    fn unit_range_is_unchanged() {
        let s = series(vec![vec![vec![0.0]], vec![vec![0.25]], vec![vec![1.0]]]);
        let stats = NormStats::fit(&s).unwrap();
        assert_eq!(stats.apply(&s).unwrap().data(), s.values());
    }

    #[test]
    fn constant_channel_uses_floor() {
        let s = series(vec![vec![vec![7.0, 1.0]], vec![vec![7.0, 3.0]]]);
        let stats = NormStats::fit(&s).unwrap();
        let t = stats.apply(&s).unwrap();
        assert_eq!(t.at(&[0, 0, 0]), 0.0);
        assert_eq!(t.at(&[1, 0, 0]), 0.0);
        assert_eq!(stats.inverse(0, 0.0), 7.0);
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(30, 12, 6, 1).unwrap().len(), 13);
        assert_eq!(window_starts(24, 12, 12, 1).unwrap(), vec![0]);
        assert!(window_starts(23, 12, 12, 1).is_err());
        assert_eq!(window_starts(30, 12, 6, 5).unwrap(), vec![0, 5, 10]);
    }

    #[test]
    fn split_is_chronological() {
        let [a, b, c] = SplitSpec::default().ranges(100).unwrap();
        assert_eq!((a, b, c), (0..70, 70..80, 80..100));
        assert!(SplitSpec { train: 0.5, val: 0.1, test: 0.1 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(vals in prop::collection::vec(0.0f64..1e4, 6..60)) {
            let n = vals.len() / 6 * 6;
            let s = TrafficSeries::new(5.0, vec!["a".into(), "b".into(), "c".into()], vec!["x".into(), "y".into()], vals[..n].to_vec()).unwrap();
            let stats = NormStats::fit(&s).unwrap();
            let back = stats.invert(&stats.apply(&s).unwrap());
            for (x, y) in back.data().iter().zip(s.values()) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn windows_are_contiguous_and_disjoint(t in 4usize..60, tau in 1usize..8, out in 1usize..6) {
            prop_assume!(t >= tau + out);
            let data = Tensor::new(&[t, 1, 1], (0..t).map(|i| i as f64).collect()).unwrap();
            let ws = make_windows(&data, tau, out, 1).unwrap();
            prop_assert_eq!(ws.len(), t - tau - out + 1);
            for w in &ws {
                let all: Vec<f64> = w.input.data().iter().chain(w.target.data()).copied().collect();
                let want: Vec<f64> = (w.start..w.start + tau + out).map(|i| i as f64).collect();
                prop_assert_eq!(all, want);
            }
        }
    }
}
