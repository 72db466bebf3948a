//! Data preparation, training and checkpoints.

mod checkpoint;
mod config;
mod train;

pub use checkpoint::{Checkpoint, MAGIC};
pub use config::TrainConfig;
pub use train::{
    forecast_windows, grid_search, mean_loss, EpochRecord, Forecast, GridResult, LeaderboardEntry, PreparedData,
    TrainOutcome, Trainer,
};
