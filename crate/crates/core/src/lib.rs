//! Sequence-based LQG control over lossy, delaying networks.
//!
//! The controller sends a whole sequence of future inputs each step; the
//! actuator buffers the newest one and plays it out. Delays and losses on
//! the controller→actuator link turn the loop into a Markov jump linear
//! system, which is solved exactly by a mode-dependent Riccati recursion.

pub mod actuator;
pub mod cli;
pub mod controller;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod mjls;
pub mod model;
pub mod network;
pub mod sim;

pub use error::*;
