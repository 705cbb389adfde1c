//! Simulation, attack generation and intrusion detection for false state-of-charge
//! reporting at EV charging stations.

pub mod attacker;
pub mod balance;
pub mod config;
mod error;
pub mod handcrafted;
pub mod ids;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod sim;
pub mod traces;

pub use error::{Error, Result};
