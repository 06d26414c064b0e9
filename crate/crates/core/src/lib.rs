//! Welfare-aware sequential multiple assignment randomized trials.
//!
//! Stage-2 randomization probabilities for non-responders are set by a
//! synthetic market in which participants spend a fixed budget on probability
//! of their preferred treatment at prices driven by predicted treatment
//! effects. The crate also fits the effect models, estimates embedded regime
//! means by inverse probability weighting, simulates trials and evaluates
//! designs by Monte Carlo replication.

pub mod allocate;
pub mod cli;
pub mod effect;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod io;
pub mod market;
pub mod ols;
pub mod rng;
pub mod sim;
pub mod trial;

pub use error::{Error, Result};
pub use trial::{Dataset, DesignKind, DesignSpec, Dtr, Trajectory};
