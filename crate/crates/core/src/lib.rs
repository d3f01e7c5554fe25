//! Simulation and analysis toolkit for a fiber link that converts
//! polarization qubits to time-bin qubits and back.
//!
//! The crate models the full measurement chain of such a link: Jones-calculus
//! optical elements, the two interconversion modules with their imperfections,
//! birefringence drift in the connecting fiber, Poissonian coincidence
//! counting, and state reconstruction (tomography, CHSH, fringe fits) from
//! the simulated count records.
//!
//! Modules are layered bottom-up:
//!
//! * [`qmath`] - dense complex matrices, pure states, density matrices.
//! * [`elements`] - transfer maps of individual optical components.
//! * [`noisegen`] - deterministic drift schedules and phase noise draws.
//! * [`chain`] - the polarization -> time-bin -> polarization channel.
//! * [`counting`] - analyzer settings, expected/sampled counts, histograms.
//! * [`tomography`] - 36-setting linear inversion, CHSH, Monte Carlo errors.
//! * [`scenario`] / [`runner`] - config files, sweeps, and output emission.

pub mod chain;
pub mod counting;
pub mod elements;
pub mod error;
pub mod noisegen;
pub mod qmath;
pub mod runner;
pub mod scenario;
pub mod tomography;

pub use error::{Error, Result};
