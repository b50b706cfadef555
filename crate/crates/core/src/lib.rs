//! Queueing-network simulation and stability analysis.

pub mod capacity;
pub mod harness;
pub mod lab;
pub mod lang;
pub mod model;
pub mod policies;
pub mod potentials;
pub mod regions;
pub mod rng;
