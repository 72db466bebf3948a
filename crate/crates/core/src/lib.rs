//! Spatio-temporal graph attention forecasting of per-node network traffic.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod numeric;
pub mod pipeline;

pub use error::{Error, ErrorKind, Result};
pub use numeric::{Tape, Tensor, Var};
