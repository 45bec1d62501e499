//! Tabular anomaly detection with a field-aware autoencoder and a
//! contrastively trained likelihood estimator.

pub mod autoencoder;
pub mod cli;
pub mod conceptbench;
pub mod config;
pub mod data;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod model;
pub mod negsampler;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
