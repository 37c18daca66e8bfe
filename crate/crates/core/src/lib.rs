//! Simulation of a phase-coding decoy-state BB84 link whose receiver is a
//! polarization-insensitive Sagnac-Mach-Zehnder interferometer.
//!
//! - [`jones`]: Jones-calculus model of the receiver and fringe visibility.
//! - [`channel`]: lossy fiber with a polarization scrambler and phase drift.
//! - [`protocol`]: analytic gain/error model, Monte Carlo engine, sifting and
//!   phase tracking.
//! - [`postproc`]: Cascade, Toeplitz privacy amplification, decoy bounds and
//!   finite-key rates.
//! - [`scenario`]: the runnable experiments behind the `qkdsim` binary.

pub mod channel;
pub mod error;
pub mod jones;
pub mod postproc;
pub mod protocol;
pub mod scenario;

pub use error::{Error, Result};
