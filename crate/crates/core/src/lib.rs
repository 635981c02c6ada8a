//! Desk-scale laboratory for MDT-driven coverage and capacity optimization.
//!
//! The crate is organised bottom-up:
//!
//! * [`scenario`] builds a synthetic cellular deployment and the per-(cell, tilt)
//!   simulated RSRP grids.
//! * [`mdt`] synthesizes MDT measurement reports, pixelizes them and derives the
//!   simulation-to-measurement corrections.
//! * [`reward`] maps SINR to spectral efficiency and computes throughput,
//!   coverage cost and the two reward variants.
//! * [`env`] is the episodic tree-MDP environment the agents act on.
//! * [`nn`] is a small differentiable Q-network with RMSprop.
//! * [`agent`] holds the DQN with depth-wise epsilon/eta exploration.
//! * [`baselines`] provides best-first search, a random policy and the exact
//!   brute-force optimum.
//! * [`config`] and [`metrics`] are the run-config and CSV/JSON plumbing used by
//!   the command line front end.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod mdt;
pub mod metrics;
pub mod nn;
pub mod reward;
pub mod scenario;
pub mod stats;

pub use error::{Error, Result};
