//! Estimation of missing-not-at-random mechanisms and latent factors in
//! high-throughput intensity matrices.

pub mod data;
pub mod error;
pub mod factor;
pub mod gmm;
pub mod hbgmm;
pub mod instruments;
pub mod ipw;
pub mod jtest;
pub mod latent;
pub mod linalg;
pub mod link;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};

pub use data::{DesignMatrices, IntensityMatrix, Partition};
pub use link::Link;
pub use pipeline::{KChoice, PipelineConfig};
pub use sim::SimulationConfig;

/// Mechanism with `f64` parameters.
pub type Mechanism = link::MissingnessMechanism<f64>;
/// Sample moments with `f64` entries.
pub type Moments = link::SampleMoments<f64>;
