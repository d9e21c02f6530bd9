//! Split conformal prediction for dependent data.
//!
//! Calibrated prediction sets for time series, with finite-sample coverage
//! corrections derived from β-mixing coefficients, set-conditional variants
//! over VC families, and risk-controlling prediction sets.

pub mod bounds;
pub mod data;
pub mod error;
pub mod ingest;
pub mod mixing;
pub mod models;
pub mod processes;
pub mod quantile;
pub mod rcps;
pub mod rng;
pub mod splitcp;

pub use data::{make_lagged_features, split_indices, SplitIndices, SupervisedDataset, TimeSeries};
pub use error::{Error, Result};
pub use quantile::QuantileLevel;
