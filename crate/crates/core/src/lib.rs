//! Simulation and analysis toolkit for a sideband microwave interferometer (SMI).
//!
//! A carrier is IQ-modulated into two first-order sidebands. One sideband probes a
//! device (typically a superconducting resonator), the other one serves as reference,
//! and down-conversion with the carrier makes both interfere at the modulation
//! frequency. Tuning the modulation amplitudes and phases places the output at a
//! point where either common-mode amplitude noise or common-mode phase noise cancels
//! to first order.
//!
//! Module map:
//!
//! * [`phasor`] closed-form output phasor, balance and operating-point solvers,
//!   sensitivity maps.
//! * [`resonator`] hanger-resonator response, photon number, spectroscopy and
//!   phase-to-frequency calibration.
//! * [`noise`] seeded generators for TLS-like frequency noise and common-mode
//!   disturbances.
//! * [`engine`] time-stepped baseband simulation with a lock-in filter.
//! * [`analysis`] PSD, Allan deviation and Gaussian-mixture estimators.
//! * [`protocol`] automated set-up procedure (mixer balance, resonance fit, null search).

pub mod analysis;
pub mod engine;
mod error;
pub mod fit;
pub mod noise;
pub mod phasor;
pub mod protocol;
pub mod resonator;
pub mod simplex;
pub mod trace;

pub use error::{Error, Result};
pub use num_complex::Complex64;
