//! Interpretable attention-based multivariate Hawkes processes.
//!
//! - [`simulator`]: parametric ground-truth Hawkes processes and thinning.
//! - [`model`]: the attention intensity and its extrapolating ablation.
//! - [`diff`]: exact gradients of the discretised log-likelihood.
//! - [`trainer`]: likelihood, initialisation and the optimisation loop.
//! - [`eval`]: metrics and interpretability exports.
//! - [`io`] and [`cli`]: file formats and the command-line driver.

pub mod cli;
pub mod diff;
pub mod domain;
pub mod eval;
pub mod io;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod trainer;

pub use domain::{Dataset, Event, EventSequence, IntegrationGrid, Split};
pub use model::{ModelConfig, ModelParams, Variant};
pub use simulator::HawkesSpec;
