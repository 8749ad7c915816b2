use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A lossless open or shorted line presents an infinite impedance.
    #[error("impedance pole: {0}")]
    ImpedancePole(String),

    #[error("flat objective: |Zin| does not depend on the phase-shifter setting")]
    FlatObjective,

    /// The field point lies within one filament spacing of a conductor.
    #[error("clearance violation: point ({x:.3e}, {y:.3e}, {z:.3e}) m is inside or too close to turn {turn}")]
    Clearance { x: f64, y: f64, z: f64, turn: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// The pi pulses are at least as long as their center spacing.
    #[error("pulses overlap: pi-pulse duration {pulse_s:.4e} s is not shorter than the pulse spacing {spacing_s:.4e} s (Rabi frequency must exceed f_casr)")]
    PulsesOverlap { pulse_s: f64, spacing_s: f64 },

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("no spectral peak: {0}")]
    NoPeak(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors that come from evaluating the physics (poles,
    /// conductor clearance, degenerate objectives) rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ImpedancePole(_)
                | Error::FlatObjective
                | Error::Clearance { .. }
                | Error::NoPeak(_)
                | Error::EmptySelection(_)
        )
    }
}
