//! Spatio-temporal adjacency construction.

mod adjacency;
mod dtw;
mod select_p;

pub use adjacency::{
    fuse_and_filter, percentile, temporal_adjacency, DtwScaling, FusedAdjacency, Matrix, SpatialAdjacency,
    TemporalAdjacency, TemporalOptions,
};
pub use dtw::{block_average, exact_dtw, fast_dtw};
pub use select_p::{select_p, Probe, SelectOptions, Selection};
