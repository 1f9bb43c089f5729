//! Simulation and analysis of a heralded photon-pair source with a
//! time-multiplexed photon-number-resolving herald arm and a lossy gated
//! receiver arm, including a photon-number-splitting eavesdropper with
//! statistical detection.
//!
//! The crate is organized as a pipeline:
//!
//! - [`dist`]: photon-pair-number distributions with verified truncation.
//! - [`convolution`]: exact bin-occupancy statistics and their inversion.
//! - [`theory`]: closed-form click probabilities and ratios.
//! - [`engine`]: the event-level Monte Carlo itself, reproducible and
//!   partition-invariant through counter-based per-trigger random streams.
//! - [`expectation`]: exact expected counts of the same model.
//! - [`estimator`]: efficiency and click-probability estimators with full
//!   error propagation.
//! - [`adversary`]: the eavesdropper model, mimic calibration, and detection.

pub mod adversary;
pub mod convolution;
pub mod dist;
pub mod engine;
pub mod error;
pub mod estimator;
pub mod expectation;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
