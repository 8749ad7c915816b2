//! Physical constants shared across modules. SI units throughout.

/// Vacuum permeability (H/m).
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// mu_0 / 4pi (H/m), the Biot-Savart prefactor.
pub const MU0_OVER_4PI: f64 = 1.0e-7;

/// NV ground-state zero-field splitting (Hz).
pub const NV_ZERO_FIELD_SPLITTING: f64 = 2.87e9;

/// NV electron gyromagnetic ratio (Hz/T), i.e. 2.8024 MHz/G.
pub const NV_GYROMAGNETIC_RATIO: f64 = 2.8024e10;

/// Reference impedance of the drive chain lines and source (ohm).
pub const Z0: f64 = 50.0;

/// Tesla per gauss.
pub const TESLA_PER_GAUSS: f64 = 1.0e-4;

/// NV axis tilt from the chip normal: arccos(1/sqrt(3)) = 54.7356 deg.
pub fn nv_axis_tilt() -> f64 {
    (1.0 / 3f64.sqrt()).acos()
}
