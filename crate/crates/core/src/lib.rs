//! PAC-Bayes margin-bound certificates for linear predictors, single
//! hidden erf-layer (SHEL) networks, partially-derandomised networks and
//! deep ReLU networks, plus the training harness and Monte-Carlo checks
//! behind them.
//!
//! The crate splits along the pipeline:
//!
//! - [`numcore`]: kl/inversion, `erf`, entropies, matrix norms.
//! - [`margins`]: margin profiles and empirical margin losses.
//! - [`models`]: forward/backward passes and the proxy samplers.
//! - [`bounds`]: the bound certificates with itemised breakdowns.
//! - [`montecarlo`]: randomised verification of the concentration lemmas.
//! - [`train`]: SGD training, sweeps, sigma calibration, sign error.
//! - [`dataset`]: IDX/CSV ingestion and synthetic blobs.
//! - [`rng`]: the deterministic counter-based generator.

pub mod bounds;
pub mod csvutil;
pub mod dataset;
pub mod error;
pub mod margins;
pub mod models;
pub mod montecarlo;
pub mod numcore;
pub mod rng;
pub mod train;

pub use bounds::BoundCertificate;
pub use dataset::{LabeledDataset, Labels, Split};
pub use error::{Error, Result};
pub use margins::{LossConvention, MarginProfile};
pub use models::serialize::Model;
pub use models::{LinearModel, NormKind, PartialShelModel, ReluModel, ShelModel};
pub use montecarlo::McEstimate;
pub use rng::CounterRng;
pub use train::{SweepRecord, TrainConfig};
