//! Quantum Kibble-Zurek toolkit for one-dimensional Rydberg chains:
//! Hamiltonian construction, exact and matrix-product-state dynamics,
//! detuning-sweep protocols, correlation-length analysis, and phase-diagram
//! scans.

pub mod analysis;
pub mod config;
pub mod error;
pub mod exact;
pub mod kzm;
pub mod model;
pub mod phasediag;
pub mod schedule;
pub mod shots;
pub mod tensornet;
pub mod util;

pub use error::{KzqError, Result};
