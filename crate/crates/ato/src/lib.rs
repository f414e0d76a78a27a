//! Configuration, experiment harness and statistics for assemble-to-order
//! lower bounds and policy simulation.

pub mod config;
pub mod harness;
pub mod stats;
