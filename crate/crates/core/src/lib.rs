//! Pollutant classification from optical particle-counter data.
//!
//! Frames of five cumulative size-channel counts become ten pairwise ratio
//! features. Three per-frame sequence classifiers consume them: a hidden
//! Markov chain decoded with the discriminative forward recursion, an LSTM,
//! and gradient-boosted trees. A seeded simulator produces labeled
//! sessions, and [`metrics`] scores predictions.

pub mod classifier;
pub mod cli;
pub mod error;
pub mod gbdt;
pub mod hmc;
pub mod lstm;
pub mod metrics;
pub mod model_file;
pub mod optim;
pub mod sensor;
pub mod simulator;

pub use error::{Error, Result};
