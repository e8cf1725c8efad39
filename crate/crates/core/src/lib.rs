//! Input-constrained MPC with an incremental reference governor (RGMPC), the
//! baselines it is compared against, and the Clohessy-Wiltshire rendezvous
//! benchmark.

pub mod error;
pub mod governor;
pub mod linalg;
pub mod mpc;
pub mod plant;
pub mod spacecraft;

pub use error::{Error, Result};
