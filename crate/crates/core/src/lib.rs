//! Data-driven process simulator: a stacked LSTM trained by teacher forcing,
//! then improved on its own closed-loop rollouts with trajectory losses.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod lstm;
pub mod matrix;
pub mod rng;
pub mod simulator;
pub mod trainer;

pub use checkpoint::ModelCheckpoint;
pub use dataset::TimeSeriesDataset;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use simulator::Predictor;
