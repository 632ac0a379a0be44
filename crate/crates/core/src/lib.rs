//! Calibration of stochastic simulators by heteroskedastic Gaussian-process
//! emulation, multi-wave history matching and approximate Bayesian
//! computation, with a built-in SEIRD agent-based simulator to calibrate.

pub mod error;
pub mod param_space;
pub mod design;
pub mod emulator;
pub mod history;
pub mod simulator;
pub mod abc;
pub mod pipeline;

pub use error::{Error, Result};
