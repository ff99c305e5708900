//! Federated stochastic approximation under Markovian noise.
//!
//! The crate is organised bottom-up:
//! * [`mdp`]: finite MDPs, policies, features and exact oracles,
//! * [`sampling`]: per-agent Markov trajectories, seeded streams, mixing diagnostics,
//! * [`engine`]: the generic federated loop with periodic averaging,
//! * [`algorithms`]: TD with linear features, off-policy tabular TD and Q-learning,
//! * [`harness`]: instance generation, trials, sweeps and persistence,
//! * [`validate`]: the desk-scale validation suite.

pub mod algorithms;
pub mod engine;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod sampling;
pub mod validate;

pub use error::{FedError, Result};
