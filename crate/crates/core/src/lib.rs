//! Discrete-time control of matching systems with task, resource and deficit
//! queues.
//!
//! The crate contains the problem model, the drift-minimizing controller
//! ([`policy`]) and its multiplier-shifted variant ([`dram`]), sampling-based
//! estimators for the reward table and state distribution ([`learning`]), a
//! solver for the empirical dual problem ([`dual`]), offline references
//! ([`oracle`]) and a slotted simulator with metrics and sweeps ([`sim`],
//! [`sweep`]).

pub mod dram;
pub mod dual;
pub mod error;
pub mod instances;
pub mod learning;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod queueing;
pub mod rng;
pub mod sim;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{Allocation, SystemConfig};
