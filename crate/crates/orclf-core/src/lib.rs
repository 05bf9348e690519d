//! Synthesis of continuous time-varying stabilizing feedback from an
//! output robust control Lyapunov function, closed-loop simulation and
//! empirical stability checks.

pub mod error;
pub mod interleave;
pub mod minimax;
pub mod model;
pub mod scheduler;
pub mod sim;
pub mod stabilize;
pub mod unitloop;
pub mod util;
pub mod verify;

pub use error::{Error, Result};
