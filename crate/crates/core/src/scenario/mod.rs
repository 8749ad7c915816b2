//! Scenario runner behind the `nvloop` binary.
//!
//! A run is described by a TOML file of dotted keys whose names carry their
//! unit (`drive.frequency_GHz = 2.55`, `esr.b0_G = [116, 526]`). The whole
//! file is parsed and validated into a [`RunConfig`] before anything is
//! computed, so static mistakes never abort a run half way.

mod output;
mod runners;
pub mod units;

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::magnetics::{CalibrationTarget, EvalPlane, LoopGeometry, MapOptions, NvFrame, Turn};
use crate::rf_network::{DriveChain, TerminationMode, DEFAULT_TUNE_GRID};
use crate::signal_analysis::{SpectrumOptions, Window};
use crate::spin_dynamics::{CasrConfig, DeadTime, NvConstants, ReadoutConvention, ReadoutModel, T2Envelope};

pub use output::{Scalar, ScenarioReport};
pub use runners::{run, run_casr, run_esr, run_inductance, run_map, run_odmr, run_rabi, run_tune};
use units::{ConfigDoc, Dimension as D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Tune,
    Map,
    Esr,
    Rabi,
    Odmr,
    Casr,
    Inductance,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::Tune,
        Scenario::Map,
        Scenario::Esr,
        Scenario::Rabi,
        Scenario::Odmr,
        Scenario::Casr,
        Scenario::Inductance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Tune => "tune",
            Scenario::Map => "map",
            Scenario::Esr => "esr",
            Scenario::Rabi => "rabi",
            Scenario::Odmr => "odmr",
            Scenario::Casr => "casr",
            Scenario::Inductance => "inductance",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneSettings {
    /// Points in the phase sweep over [0, pi).
    pub sweep_points: usize,
    /// Coarse grid of the optimizer.
    pub grid_points: usize,
    /// Optional (frequency, available power) table for a tuned-vs-fixed sweep.
    pub frequency_table: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSettings {
    pub plane: EvalPlane,
    pub frame: NvFrame,
    pub options: MapOptions,
    /// Fixed loop current (A). `None` takes the current delivered by the drive chain.
    pub current: Option<f64>,
    /// Fit the standoff to `target` before mapping.
    pub calibrate: bool,
    pub target: CalibrationTarget,
    /// Sides of the centered squares used for homogeneity statistics (m).
    pub squares: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RabiSettings {
    pub f1: f64,
    pub detuning: f64,
    pub duration: f64,
    pub step: f64,
    pub contrast_depth: f64,
    /// Also simulate the ensemble inside a laser spot at this position of the map plane.
    pub ensemble_spot: Option<(f64, f64)>,
    pub spot_diameter: f64,
    pub zero_pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdmrSettings {
    /// Line center (Hz); `None` uses the lower ESR line of the first configured field.
    pub f0: Option<f64>,
    pub f1: f64,
    pub pulse_duration: f64,
    pub span: f64,
    pub points: usize,
    pub contrast_depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CasrSettings {
    pub run: CasrConfig,
    pub spectrum: SpectrumOptions,
    /// Peak search band (Hz); `None` searches everything above DC.
    pub band: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub drive_frequency: f64,
    pub chain: DriveChain,
    pub tune: TuneSettings,
    pub geometry: LoopGeometry,
    pub map: MapSettings,
    pub nv: NvConstants,
    /// Bias fields along the NV axis (T).
    pub esr_fields: Vec<f64>,
    pub rabi: RabiSettings,
    pub odmr: OdmrSettings,
    pub casr: CasrSettings,
    /// Every key set in the file, echoed in its own unit after conversion.
    pub echo: Vec<(String, String)>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn to_usize(v: u64) -> usize {
    usize::try_from(v).unwrap_or(usize::MAX)
}

fn broadcast(name: &str, values: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        len if len == n => Ok(values),
        len => Err(Error::Config(format!(
            "`{name}` has {len} entries; expected 1 or one per turn ({n})"
        ))),
    }
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn from_toml(text: &str, scenario: Scenario, overrides: &Overrides) -> Result<Self> {
        let mut doc = ConfigDoc::parse(text)?;
        let cfg = Self::read(&mut doc, scenario, overrides)?;
        let echo = doc.finish()?;
        let cfg = RunConfig { echo, ..cfg };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, scenario: Scenario, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, scenario, overrides)
    }

    /// All defaults, as if the config file were empty.
    pub fn defaults(scenario: Scenario) -> Self {
        Self::from_toml("", scenario, &Overrides::default()).expect("defaults are valid")
    }

    fn read(doc: &mut ConfigDoc, scenario: Scenario, overrides: &Overrides) -> Result<Self> {
        let seed = doc.integer("seed", 0)?;
        let output_dir = doc.text("output_dir")?.map(PathBuf::from);

        let drive_frequency = doc.quantity("drive.frequency", D::Frequency, 2.55e9)?;
        let power = doc.quantity("drive.power", D::Power, 34.8)?;

        let base = DriveChain::default();
        let blocking = doc.quantity("chain.blocking_capacitance", D::Capacitance, 0.5e-12)?;
        let chain = DriveChain {
            source_impedance: Complex64::new(doc.quantity("chain.source_resistance", D::Resistance, 50.0)?, 0.0),
            available_power: power,
            line2_phase: doc.quantity("chain.line2_phase", D::Angle, 0.0)?,
            phase_shifter_phi: doc.quantity("chain.phase_setting", D::Angle, 0.0)?,
            blocking_capacitance: if blocking.is_infinite() { None } else { Some(blocking) },
            loop_inductance: doc.quantity("chain.loop_inductance", D::Inductance, base.loop_inductance)?,
            parasitic_shunt_capacitance: doc.quantity("chain.parasitic_capacitance", D::Capacitance, 0.0)?,
            line_loss_db: doc.quantity("chain.line_loss", D::Decibel, 0.0)?,
            termination: match doc.choice("chain.termination", &["phase_shifter", "fixed_50_ohm"], 0)? {
                0 => TerminationMode::OpenPhaseShifter,
                _ => TerminationMode::Fixed50Ohm,
            },
        };

        let table_f = doc.quantities("tune.table_frequency", D::Frequency, &[])?;
        let table_p = doc.quantities("tune.table_power", D::Power, &[])?;
        if table_p.len() > 1 && table_p.len() != table_f.len() {
            return Err(Error::Config(format!(
                "`tune.table_power` has {} entries for {} frequencies",
                table_p.len(),
                table_f.len()
            )));
        }
        let frequency_table = table_f
            .iter()
            .enumerate()
            .map(|(i, &f)| (f, table_p.get(i).or(table_p.first()).copied().unwrap_or(power)))
            .collect();
        let tune = TuneSettings {
            sweep_points: to_usize(doc.integer("tune.points", 720)?),
            grid_points: to_usize(doc.integer("tune.grid", DEFAULT_TUNE_GRID as u64)?),
            frequency_table,
        };

        let default_geom = LoopGeometry::default();
        let radii = doc.quantities(
            "loop.radii",
            D::Length,
            &default_geom.turns.iter().map(|t| t.radius).collect::<Vec<_>>(),
        )?;
        let n = radii.len();
        let width = broadcast(
            "loop.trace_width",
            doc.quantities("loop.trace_width", D::Length, &[default_geom.turns[0].trace_width])?,
            n,
        )?;
        let default_thickness: Vec<f64> = if n == default_geom.turns.len() {
            default_geom.turns.iter().map(|t| t.trace_thickness).collect()
        } else {
            vec![default_geom.turns[0].trace_thickness]
        };
        let thickness = broadcast(
            "loop.trace_thickness",
            doc.quantities("loop.trace_thickness", D::Length, &default_thickness)?,
            n,
        )?;
        let z = broadcast("loop.z_offset", doc.quantities("loop.z_offset", D::Length, &[0.0])?, n)?;
        let geometry = LoopGeometry {
            turns: (0..n)
                .map(|i| Turn {
                    radius: radii[i],
                    z_offset: z[i],
                    trace_width: width[i],
                    trace_thickness: thickness[i],
                })
                .collect(),
            segments_per_turn: to_usize(doc.integer("loop.segments_per_turn", default_geom.segments_per_turn as u64)?),
            bundle_radial: to_usize(doc.integer("loop.bundle_radial", default_geom.bundle_radial as u64)?),
            bundle_vertical: to_usize(doc.integer("loop.bundle_vertical", default_geom.bundle_vertical as u64)?),
        };

        let nv_default = NvConstants::default();
        let t2 = doc.quantity_opt("nv.t2", D::Time)?;
        let t2_exponent = doc.number("nv.t2_exponent", 1.0)?;
        let nv = NvConstants {
            zero_field_splitting: doc.quantity("nv.zero_field_splitting", D::Frequency, nv_default.zero_field_splitting)?,
            gyromagnetic_ratio: nv_default.gyromagnetic_ratio,
            t2_envelope: t2.map(|t2| T2Envelope {
                t2,
                exponent: t2_exponent,
            }),
        };

        let plane_default = EvalPlane::default();
        let extent = doc.quantity("map.extent", D::Length, plane_default.extent_x)?;
        let spot = doc.quantity("map.spot_diameter", D::Length, 5e-6)?;
        let frame_default = NvFrame::default();
        let target_default = CalibrationTarget::default();
        let map = MapSettings {
            plane: EvalPlane {
                standoff_height: doc.quantity("map.standoff", D::Length, plane_default.standoff_height)?,
                extent_x: extent,
                extent_y: extent,
                pixel_pitch: doc.quantity("map.pitch", D::Length, plane_default.pixel_pitch)?,
            },
            frame: NvFrame {
                axis_tilt: doc.quantity("map.nv_tilt", D::Angle, frame_default.axis_tilt)?,
                azimuth: doc.quantity("map.nv_azimuth", D::Angle, frame_default.azimuth)?,
            },
            options: MapOptions {
                spot_diameter: (spot > 0.0).then_some(spot),
                gyromagnetic_ratio: nv.gyromagnetic_ratio,
                drive_frequency,
            },
            current: doc.quantity_opt("map.current", D::Current)?,
            calibrate: doc.flag("map.calibrate", false)?,
            target: CalibrationTarget {
                ratio: doc.number("map.calibration_ratio", target_default.ratio)?,
                offset: doc.quantity("map.calibration_offset", D::Length, target_default.offset)?,
                offset_azimuth: doc.quantity("map.calibration_azimuth", D::Angle, target_default.offset_azimuth)?,
                spot_diameter: (spot > 0.0).then_some(spot),
                search: target_default.search,
            },
            squares: doc.quantities("map.squares", D::Length, &[40e-6, 100e-6])?,
        };

        let esr_fields = doc.quantities("esr.b0", D::MagneticField, &[116e-4, 526e-4, 1125e-4])?;

        let ensemble = doc.flag("rabi.ensemble", false)?;
        let spot_x = doc.quantity("rabi.spot_x", D::Length, 0.0)?;
        let spot_y = doc.quantity("rabi.spot_y", D::Length, 0.0)?;
        let rabi = RabiSettings {
            f1: doc.quantity("rabi.f1", D::Frequency, 136.3e6)?,
            detuning: doc.quantity("rabi.detuning", D::Frequency, 0.0)?,
            duration: doc.quantity("rabi.duration", D::Time, 100e-9)?,
            step: doc.quantity("rabi.step", D::Time, 0.1e-9)?,
            contrast_depth: doc.number("rabi.contrast_depth", 0.03)?,
            ensemble_spot: ensemble.then_some((spot_x, spot_y)),
            spot_diameter: doc.quantity("rabi.spot_diameter", D::Length, 5e-6)?,
            zero_pad: to_usize(doc.integer("rabi.zero_pad", 4)?),
        };

        let odmr = OdmrSettings {
            f0: doc.quantity_opt("odmr.f0", D::Frequency)?,
            f1: doc.quantity("odmr.f1", D::Frequency, 1e6)?,
            pulse_duration: doc.quantity("odmr.pulse", D::Time, 10e-6)?,
            span: doc.quantity("odmr.span", D::Frequency, 20e6)?,
            points: to_usize(doc.integer("odmr.points", 401)?),
            contrast_depth: doc.number("odmr.contrast_depth", 0.03)?,
        };

        let casr_default = CasrConfig::default();
        let dead_default = DeadTime::default();
        let seed = overrides.seed.unwrap_or(seed);
        let band = doc.quantities("casr.band", D::Frequency, &[])?;
        let casr = CasrSettings {
            run: CasrConfig {
                total_time: doc.quantity("casr.total_time", D::Time, casr_default.total_time)?,
                f_signal: doc.quantity("casr.f_signal", D::Frequency, casr_default.f_signal)?,
                signal_amplitude: doc.quantity("casr.amplitude", D::MagneticField, casr_default.signal_amplitude)?,
                signal_phase: doc.quantity("casr.signal_phase", D::Angle, casr_default.signal_phase)?,
                generator_offset_ppm: doc.quantity("casr.generator_offset", D::PartsPerMillion, 0.0)?,
                f_casr: doc.quantity("casr.f_casr", D::Frequency, casr_default.f_casr)?,
                n_repeats: to_usize(doc.integer("casr.n_repeats", casr_default.n_repeats as u64)?),
                f1: doc.quantity("casr.f1", D::Frequency, casr_default.f1)?,
                readout: ReadoutModel {
                    contrast_depth: doc.number("casr.contrast_depth", casr_default.readout.contrast_depth)?,
                    noise_std: doc.number("casr.noise_std", 0.0)?,
                    seed,
                },
                convention: match doc.choice("casr.readout", &["sin", "cos"], 0)? {
                    0 => ReadoutConvention::Sin,
                    _ => ReadoutConvention::Cos,
                },
                dead_time: DeadTime {
                    pre_laser_delay: doc.quantity("casr.pre_laser_delay", D::Time, dead_default.pre_laser_delay)?,
                    laser_pulse: doc.quantity("casr.laser_pulse", D::Time, dead_default.laser_pulse)?,
                    post_laser_delay: doc.quantity("casr.post_laser_delay", D::Time, dead_default.post_laser_delay)?,
                },
                constants: nv,
                steps_per_signal_period: to_usize(
                    doc.integer("casr.steps_per_signal_period", casr_default.steps_per_signal_period as u64)?,
                ),
            },
            spectrum: SpectrumOptions {
                window: match doc.choice("casr.window", &["rectangular", "hann"], 0)? {
                    0 => Window::Rectangular,
                    _ => Window::Hann,
                },
                zero_pad: to_usize(doc.integer("casr.zero_pad", SpectrumOptions::default().zero_pad as u64)?),
            },
            band: match band.as_slice() {
                [] => None,
                [lo, hi] => Some((*lo, *hi)),
                _ => return Err(Error::Config("`casr.band` needs exactly two entries [low, high]".into())),
            },
        };

        Ok(RunConfig {
            scenario,
            output_dir: overrides
                .output_dir
                .clone()
                .or(output_dir)
                .unwrap_or_else(|| PathBuf::from("nvloop-out")),
            seed,
            drive_frequency,
            chain,
            tune,
            geometry,
            map,
            nv,
            esr_fields,
            rabi,
            odmr,
            casr,
            echo: Vec::new(),
        })
    }

    /// Checks every module precondition reachable from this config.
    pub fn validate(&self) -> Result<()> {
        if !(self.drive_frequency > 0.0 && self.drive_frequency.is_finite()) {
            return Err(Error::invalid("drive.frequency", "must be finite and > 0"));
        }
        self.chain.validate()?;
        if self.tune.sweep_points < 2 {
            return Err(Error::invalid("tune.points", "must be >= 2"));
        }
        if self.tune.grid_points < 720 {
            return Err(Error::invalid("tune.grid", "must be >= 720"));
        }
        for &(f, p) in &self.tune.frequency_table {
            if !(f > 0.0 && f.is_finite() && p > 0.0 && p.is_finite()) {
                return Err(Error::invalid("tune.table_frequency", "frequencies and powers must be finite and > 0"));
            }
        }

        self.geometry.validate()?;
        let map = &self.map;
        map.plane.validate()?;
        map.frame.validate()?;
        if let Some(i) = map.current {
            if !i.is_finite() {
                return Err(Error::invalid("map.current", "must be finite"));
            }
        }
        if map.options.spot_diameter.is_some_and(|d| !d.is_finite()) {
            return Err(Error::invalid("map.spot_diameter", "must be finite"));
        }
        let extent = map.plane.extent_x.min(map.plane.extent_y);
        for &s in &map.squares {
            if !(s > 0.0 && s <= extent + 1e-12) {
                return Err(Error::invalid("map.squares", "sides must be > 0 and fit inside map.extent"));
            }
        }
        if !(map.target.ratio > 0.0 && map.target.offset > 0.0 && map.target.offset_azimuth.is_finite()) {
            return Err(Error::invalid("map.calibration_ratio", "ratio and offset must be > 0"));
        }

        self.nv.validate()?;
        if self.esr_fields.is_empty() || self.esr_fields.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::invalid("esr.b0", "need at least one finite field >= 0"));
        }

        let r = &self.rabi;
        if !(r.f1 > 0.0 && r.f1.is_finite() && r.detuning.is_finite()) {
            return Err(Error::invalid("rabi.f1", "must be finite and > 0"));
        }
        if !(r.step > 0.0 && r.duration >= r.step && r.duration.is_finite()) {
            return Err(Error::invalid("rabi.step", "need 0 < step <= duration"));
        }
        if !(0.0..=1.0).contains(&r.contrast_depth) {
            return Err(Error::invalid("rabi.contrast_depth", "must lie in [0, 1]"));
        }
        if r.ensemble_spot.is_some() && !(r.spot_diameter > 0.0) {
            return Err(Error::invalid("rabi.spot_diameter", "must be > 0"));
        }
        if r.zero_pad == 0 {
            return Err(Error::invalid("rabi.zero_pad", "must be >= 1"));
        }

        let o = &self.odmr;
        if let Some(f0) = o.f0 {
            if !(f0 > 0.0 && f0.is_finite()) {
                return Err(Error::invalid("odmr.f0", "must be finite and > 0"));
            }
        }
        if !(o.f1 >= 0.0 && o.f1.is_finite()) {
            return Err(Error::invalid("odmr.f1", "must be finite and >= 0"));
        }
        if !(o.pulse_duration > 0.0 && o.pulse_duration.is_finite()) {
            return Err(Error::invalid("odmr.pulse", "must be finite and > 0"));
        }
        if !(o.span > 0.0 && o.span.is_finite()) || o.points < 2 {
            return Err(Error::invalid("odmr.span", "need span > 0 and at least 2 points"));
        }
        if !(0.0..=1.0).contains(&o.contrast_depth) {
            return Err(Error::invalid("odmr.contrast_depth", "must lie in [0, 1]"));
        }

        self.casr.run.validate()?;
        if self.casr.spectrum.zero_pad == 0 {
            return Err(Error::invalid("casr.zero_pad", "must be >= 1"));
        }
        if let Some((lo, hi)) = self.casr.band {
            if !(lo >= 0.0 && hi > lo) {
                return Err(Error::invalid("casr.band", "need 0 <= low < high"));
            }
        }
        Ok(())
    }

    fn omega(&self) -> f64 {
        2.0 * PI * self.drive_frequency
    }
}
