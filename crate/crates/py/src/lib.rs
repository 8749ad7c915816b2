//! Python bindings for the `nvloop` modeling toolkit.
//!
//! All quantities are SI (Hz, T, m, A, s, H, F, W, rad) on both sides.

use std::path::PathBuf;

use nvloop::magnetics::{self, CalibrationTarget, EvalPlane, LoopGeometry, MapOptions, NvFrame};
use nvloop::rf_network::{self, DriveChain};
use nvloop::scenario::{self, Overrides, RunConfig, Scalar, Scenario};
use nvloop::signal_analysis::{self, SpectrumOptions, TimeSeries, Window};
use nvloop::spin_dynamics::{self, CasrConfig, NvConstants, ReadoutModel};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: nvloop::Error) -> PyErr {
    match e {
        nvloop::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn window(name: &str) -> PyResult<Window> {
    match name {
        "rectangular" => Ok(Window::Rectangular),
        "hann" => Ok(Window::Hann),
        other => Err(PyValueError::new_err(format!(
            "window must be 'rectangular' or 'hann', got {other:?}"
        ))),
    }
}

/// ESR line pair (f_minus, f_plus) in Hz for a bias field `b0` in tesla.
#[pyfunction]
fn esr_frequencies(b0: f64) -> PyResult<(f64, f64)> {
    let l = spin_dynamics::esr_frequencies(b0, &NvConstants::default()).map_err(to_py)?;
    Ok((l.f_minus, l.f_plus))
}

#[pyfunction]
#[pyo3(signature = (t, f1, detuning = 0.0))]
fn rabi_population(t: f64, f1: f64, detuning: f64) -> f64 {
    spin_dynamics::rabi_population(t, f1, detuning)
}

/// Tunes the phase shifter for maximum loop current.
#[pyfunction]
#[pyo3(signature = (
    frequency,
    loop_inductance = 5.7e-9,
    blocking_capacitance = Some(0.5e-12),
    available_power = 34.8,
    line_loss_db = 0.0,
    parasitic_capacitance = 0.0,
    line2_phase = 0.0,
))]
#[allow(clippy::too_many_arguments)]
fn optimal_phase<'py>(
    py: Python<'py>,
    frequency: f64,
    loop_inductance: f64,
    blocking_capacitance: Option<f64>,
    available_power: f64,
    line_loss_db: f64,
    parasitic_capacitance: f64,
    line2_phase: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let chain = DriveChain {
        loop_inductance,
        blocking_capacitance,
        available_power,
        line_loss_db,
        parasitic_shunt_capacitance: parasitic_capacitance,
        line2_phase,
        ..DriveChain::default()
    };
    let omega = 2.0 * std::f64::consts::PI * frequency;
    let t = rf_network::optimal_phase(omega, &chain).map_err(to_py)?;
    let fixed = rf_network::fixed_termination_current(omega, &chain).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("phi_opt", t.phi_opt)?;
    d.set_item("zin", (t.zin_at_opt.re, t.zin_at_opt.im))?;
    d.set_item("loop_current", t.loop_current_amplitude)?;
    d.set_item("reflection", t.reflection_coefficient_magnitude)?;
    d.set_item("fixed_50_ohm_current", fixed)?;
    Ok(d)
}

/// Rabi frequency per square-root watt.
#[pyfunction]
fn driving_efficiency(f1: f64, power: f64) -> PyResult<f64> {
    rf_network::driving_efficiency(f1, power).map_err(to_py)
}

/// Total inductance (H) of the default three-turn loop.
#[pyfunction]
fn loop_inductance() -> PyResult<f64> {
    magnetics::loop_inductance(&LoopGeometry::default()).map_err(to_py)
}

/// Standoff (m) at which f1 at a 50 um offset over f1 on axis equals `ratio`.
#[pyfunction]
#[pyo3(signature = (ratio = 151.2 / 136.3))]
fn calibrate_standoff(ratio: f64) -> PyResult<(f64, f64)> {
    let target = CalibrationTarget {
        ratio,
        ..CalibrationTarget::default()
    };
    let c = magnetics::calibrate_standoff(&LoopGeometry::default(), &NvFrame::default(), &target).map_err(to_py)?;
    Ok((c.standoff_height, c.achieved_ratio))
}

/// Rabi-frequency map over the evaluation plane.
#[pyclass(name = "FieldMap", module = "nvloop_py", frozen)]
struct PyFieldMap {
    inner: magnetics::FieldMap,
}

#[pymethods]
impl PyFieldMap {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.ny, self.inner.nx)
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.pixels.iter().map(|p| p.x).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.pixels.iter().map(|p| p.y).collect()
    }

    #[getter]
    fn f1(&self) -> Vec<f64> {
        self.inner.pixels.iter().map(|p| p.f1).collect()
    }

    #[getter]
    fn flagged(&self) -> Vec<bool> {
        self.inner.pixels.iter().map(|p| p.flagged).collect()
    }

    #[getter]
    fn standoff(&self) -> f64 {
        self.inner.plane.standoff_height
    }

    fn center_f1(&self) -> Option<f64> {
        self.inner.center().map(|p| p.f1)
    }

    /// (mean f1, normalized std, pixel count) over a centered square.
    fn homogeneity(&self, side: f64) -> PyResult<(f64, f64, usize)> {
        let h = magnetics::homogeneity(&self.inner, side).map_err(to_py)?;
        Ok((h.mean, h.normalized_std, h.pixel_count))
    }

    fn __repr__(&self) -> String {
        format!(
            "FieldMap({}x{}, standoff={:.3e} m, current={:.4} A)",
            self.inner.ny, self.inner.nx, self.inner.plane.standoff_height, self.inner.drive_current
        )
    }
}

#[pyfunction]
#[pyo3(signature = (current = 1.0, standoff = 20e-6, extent = 280e-6, pitch = 10e-6, spot_diameter = Some(5e-6)))]
fn f1_map(current: f64, standoff: f64, extent: f64, pitch: f64, spot_diameter: Option<f64>) -> PyResult<PyFieldMap> {
    let plane = EvalPlane {
        standoff_height: standoff,
        extent_x: extent,
        extent_y: extent,
        pixel_pitch: pitch,
    };
    let opts = MapOptions {
        spot_diameter,
        ..MapOptions::default()
    };
    let inner = magnetics::f1_map(&LoopGeometry::default(), &plane, &NvFrame::default(), current, &opts)
        .map_err(to_py)?;
    Ok(PyFieldMap { inner })
}

/// Synchronized-readout run; returns the PL record and timing.
#[pyfunction]
#[pyo3(signature = (
    total_time = 1.0,
    f_signal = 29.992e6,
    f_casr = 30e6,
    f1 = 136.3e6,
    amplitude = 100e-9,
    n_repeats = 6,
    noise_std = 0.0,
    seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn casr_run<'py>(
    py: Python<'py>,
    total_time: f64,
    f_signal: f64,
    f_casr: f64,
    f1: f64,
    amplitude: f64,
    n_repeats: usize,
    noise_std: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = CasrConfig {
        total_time,
        f_signal,
        f_casr,
        f1,
        signal_amplitude: amplitude,
        n_repeats,
        readout: ReadoutModel {
            noise_std,
            seed,
            ..ReadoutModel::default()
        },
        ..CasrConfig::default()
    };
    let run = py.detach(|| spin_dynamics::casr_run(&cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("pl", run.pl.samples)?;
    d.set_item("block_period", run.block_period)?;
    d.set_item("expected_frequency", run.expected_frequency)?;
    Ok(d)
}

fn make_spectrum(samples: Vec<f64>, sample_period: f64, win: &str, zero_pad: usize) -> PyResult<signal_analysis::Spectrum> {
    let ts = TimeSeries::new(samples, sample_period, 0.0).map_err(to_py)?;
    Ok(signal_analysis::spectrum_with(
        &ts,
        &SpectrumOptions {
            window: window(win)?,
            zero_pad,
        },
    ))
}

/// One-sided magnitude spectrum: (frequencies, magnitudes).
#[pyfunction]
#[pyo3(signature = (samples, sample_period, window = "rectangular", zero_pad = 4))]
fn spectrum(samples: Vec<f64>, sample_period: f64, window: &str, zero_pad: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = make_spectrum(samples, sample_period, window, zero_pad)?;
    Ok((s.freqs, s.magnitudes))
}

/// Largest peak in [band_low, band_high]: (f_peak, amplitude, fwhm).
#[pyfunction]
#[pyo3(signature = (samples, sample_period, band_low, band_high, window = "rectangular", zero_pad = 4))]
fn peak(
    samples: Vec<f64>,
    sample_period: f64,
    band_low: f64,
    band_high: f64,
    window: &str,
    zero_pad: usize,
) -> PyResult<(f64, f64, f64)> {
    let s = make_spectrum(samples, sample_period, window, zero_pad)?;
    let p = signal_analysis::peak(&s, (band_low, band_high)).map_err(to_py)?;
    Ok((p.f_peak, p.amplitude, p.fwhm))
}

/// Runs a CLI scenario from config text; returns scalars and written files.
#[pyfunction]
#[pyo3(signature = (scenario, config, out_dir, seed = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: &str,
    config: &str,
    out_dir: PathBuf,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let sc: Scenario = scenario.parse().map_err(to_py)?;
    let overrides = Overrides {
        output_dir: Some(out_dir),
        seed,
    };
    let cfg = RunConfig::from_toml(config, sc, &overrides).map_err(to_py)?;
    let report = py.detach(|| scenario::run(&cfg)).map_err(to_py)?;
    let scalars = PyDict::new(py);
    for (k, v) in &report.scalars {
        match v {
            Scalar::Number(x) => scalars.set_item(k, *x)?,
            Scalar::Text(s) => scalars.set_item(k, s)?,
        }
    }
    let d = PyDict::new(py);
    d.set_item("scalars", scalars)?;
    d.set_item("files", report.files)?;
    Ok(d)
}

#[pymodule]
fn nvloop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(esr_frequencies, m)?)?;
    m.add_function(wrap_pyfunction!(rabi_population, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_phase, m)?)?;
    m.add_function(wrap_pyfunction!(driving_efficiency, m)?)?;
    m.add_function(wrap_pyfunction!(loop_inductance, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_standoff, m)?)?;
    m.add_function(wrap_pyfunction!(f1_map, m)?)?;
    m.add_function(wrap_pyfunction!(casr_run, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(peak, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_class::<PyFieldMap>()?;
    Ok(())
}
