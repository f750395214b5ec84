//! Simulation and analysis of photon-number superposition states emitted by
//! a coherently driven two-level emitter.

pub mod analysis;
pub mod emitter;
pub mod error;
pub mod fock;
pub mod interference;
pub mod mzi;

pub use error::{Error, Result};
pub use fock::NumberState;
