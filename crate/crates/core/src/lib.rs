//! Modeling toolkit for an impedance-tuned planar microwave loop driving a
//! dense NV-diamond spin ensemble.
//!
//! The crate is split along the physical signal chain:
//!
//! * [`rf_network`]: drive chain impedances, phase-shifter tuning, loop current.
//! * [`magnetics`]: Biot-Savart maps of the loop field, NV-axis projection,
//!   Rabi-frequency maps, homogeneity statistics and loop inductance.
//! * [`spin_dynamics`]: two-level NV spin physics (ESR lines, Rabi, ODMR,
//!   XY8 decoupling and synchronized-readout AC sensing).
//! * [`signal_analysis`]: one-sided magnitude spectra, peak and FWHM estimates.
//! * [`scenario`]: config parsing and the scenario runners behind the `nvloop` CLI.

// Negated comparisons are used on purpose so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod error;
pub mod magnetics;
pub mod rf_network;
pub mod scenario;
pub mod signal_analysis;
pub mod spin_dynamics;

mod elliptic;

pub use error::{Error, Result};
