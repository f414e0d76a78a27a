//! Lower bounds, replenishment and allocation policies, and discrete-event
//! simulation for assemble-to-order inventory systems with non-identical
//! deterministic lead times.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod demand;
pub mod lp;
pub mod model;
pub mod policy;
pub mod sim;
pub mod sp;
pub mod tracking;
