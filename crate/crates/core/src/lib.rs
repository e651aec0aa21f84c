//! Model-free volt-VAR control for three-phase unbalanced distribution feeders.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: feeder model, node-phase indexing, Y-bus / Z-bus construction.
//! - [`powerflow`]: Z-bus fixed-point power flow and the objective/bound checks.
//! - [`nn`]: a small fully-connected network engine with manual backprop.
//! - [`surrogate`]: learned injection → voltage-magnitude model.
//! - [`profiles`]: hourly load/PV scenarios (synthetic generator and CSV).
//! - [`env`]: the control MDP over a surrogate or true power-flow backend.
//! - [`ddpg`]: actor-critic learner, replay buffer and evaluation.
//! - [`harness`]: end-to-end commands behind the `voltreg` binary.

pub mod ddpg;
pub mod env;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod powerflow;
pub mod profiles;
pub mod surrogate;

pub use error::{Error, Result};
