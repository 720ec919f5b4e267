//! Policy engine and benchmark harness for restless bandits whose reward
//! couples arms through a global monotone submodular function.
//!
//! The library is organized bottom-up: [`model`] holds instances and
//! joint-transition mechanics, [`reward`] the global reward families and
//! their per-arm summaries, [`whittle`] the subsidized solvers and index
//! tables, [`policy`] every decision rule, [`simulate`] the episode and
//! experiment engines, [`generate`] instance construction and ingestion,
//! and [`bounds`] the approximation-ratio diagnostics.

pub mod bounds;
pub mod error;
pub mod generate;
pub mod hash;
pub mod mcts;
pub mod model;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod simulate;
pub mod whittle;

pub use error::{Error, Result};
