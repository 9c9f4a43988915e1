//! Student-performance classification benchmark toolkit.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the CLI uses.

pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod explain;
pub mod models;
pub mod preprocess;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use dataset::{ClassLabel, Dataset, Schema};
pub use error::{Error, Result};
pub use models::{Family, ModelParams, ModelSpec};
pub use preprocess::ProtocolName;

pub type Matrix = preprocess::DesignMatrix<f64>;
pub type Matrix32 = preprocess::DesignMatrix<f32>;
pub type Model = models::TrainedModel<f64>;
pub type Model32 = models::TrainedModel<f32>;
pub type Scaler = preprocess::Standardizer<f64>;
