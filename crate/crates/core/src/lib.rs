//! GEO beam-hopping simulation and illumination-pattern scheduling.
//!
//! The crate models a multibeam GEO forward link over a hexagonal cell grid
//! (channel gains, co-channel interference, per-cell packet queues) and
//! computes illumination patterns with Monte Carlo tree search, a greedy
//! rule and several baselines. [`orchestrator::Tyche`] combines them: a
//! demand-keyed plan cache answers repeated requests, misses are answered
//! greedily while tree search refines the plan in the background.

pub mod baselines;
pub mod cache;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mcts;
pub mod orchestrator;
pub mod pattern;
pub mod schedule;
pub mod scoring;
pub mod system;
pub mod trace;
pub mod traffic;

pub use error::{Error, Result};
