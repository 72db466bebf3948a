//! Criterion benchmarks for the forecasting engine; see `benches/`.
