mod load;
mod prep;
mod series;
pub mod synthetic;

pub use load::{load_dataset, load_generic_csv, load_traffic_matrices, parse_generic_csv, DatasetFormat};
pub use prep::{extract_window, make_windows, window_starts, NormStats, SplitSpec, WindowBatch, SCALE_FLOOR};
pub use series::TrafficSeries;
