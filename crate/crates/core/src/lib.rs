//! Numerics workbench for adaptive reward shaping.
//!
//! Tabular Bellman solvers, backward-Euler BSDE iteration on discretized
//! controlled diffusions, metric complexity (γ₂) estimates, and the
//! hitting-time / regret experiments built on top of them.

pub mod bars;
pub mod bsde;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod harness;
pub mod mdp;
pub mod metric;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
