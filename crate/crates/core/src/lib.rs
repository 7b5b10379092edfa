//! Simulation and numerical design of the optimal inconclusive measurement
//! of binary coherent states `{|α⟩, |−α⟩}` by displacement, on/off photon
//! counting and feedback.
//!
//! * [`bounds`]: Helstrom, IDP and homodyne reference limits.
//! * [`waveform`]: the two-mode LO magnitude table with R-clamp and DAC.
//! * [`evolution`]: deterministic bin-by-bin probability evolution.
//! * [`solver`]: numerical design of `(t1, v)` and tradeoff frontiers.
//! * [`montecarlo`]: trial-level simulation with counter-based RNG streams.
//! * [`mpsk`]: state elimination + binary stage for M-PSK alphabets.
//! * [`export`]: CSV/JSON writers shared by the CLI and the test suites.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod evolution;
pub mod export;
pub mod model;
pub mod montecarlo;
pub mod mpsk;
pub mod solver;
pub mod waveform;

pub use error::{OimError, Result};
pub use model::{ImperfectionModel, ProbabilityTriple, StrategySpec};
