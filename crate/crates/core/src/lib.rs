//! Stochastic xLSTM forecaster: xLSTM cells with Gaussian latent states in a
//! state-space factorization, trained by variational inference.

pub mod cells;
pub mod config;
pub mod dataio;
mod error;
pub mod generative;
pub mod inference;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod preprocess;
pub mod trainer;

pub use config::{Activation, ModelConfig};
pub use error::{Error, Result};
pub use model::StoxModel;
