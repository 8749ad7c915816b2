//! Two-level NV spin dynamics in the rotating frame of the drive.
//!
//! The state is a Bloch vector with `z = -1` for m_s = 0 (the optically
//! bright, initialized state) and `z = +1` for the driven m_s = +-1 level.
//! Microwave pulses rotate about an equatorial axis at their phase; the AC
//! test field enters as a z rotation through the Zeeman shift gamma * B(t).

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::constants::{NV_GYROMAGNETIC_RATIO, NV_ZERO_FIELD_SPLITTING};
use crate::error::{Error, Result};
use crate::signal_analysis::TimeSeries;

/// Phenomenological coherence decay exp(-(t/T2)^p), applied during free evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct T2Envelope {
    pub t2: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvConstants {
    /// Delta (Hz).
    pub zero_field_splitting: f64,
    /// gamma (Hz/T).
    pub gyromagnetic_ratio: f64,
    pub t2_envelope: Option<T2Envelope>,
}

impl Default for NvConstants {
    fn default() -> Self {
        Self {
            zero_field_splitting: NV_ZERO_FIELD_SPLITTING,
            gyromagnetic_ratio: NV_GYROMAGNETIC_RATIO,
            t2_envelope: None,
        }
    }
}

impl NvConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.zero_field_splitting > 0.0) {
            return Err(Error::invalid("zero_field_splitting", "must be > 0"));
        }
        if !(self.gyromagnetic_ratio > 0.0) {
            return Err(Error::invalid("gyromagnetic_ratio", "must be > 0"));
        }
        if let Some(env) = self.t2_envelope {
            if !(env.t2 > 0.0 && env.exponent > 0.0) {
                return Err(Error::invalid("t2_envelope", "T2 and exponent must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsrLines {
    /// m_s = 0 <-> -1 (Hz).
    pub f_minus: f64,
    /// m_s = 0 <-> +1 (Hz).
    pub f_plus: f64,
}

/// ESR transition frequencies for a bias field `b0` (T) along the NV axis.
pub fn esr_frequencies(b0: f64, constants: &NvConstants) -> Result<EsrLines> {
    if !(b0 >= 0.0 && b0.is_finite()) {
        return Err(Error::invalid("b0", "must be finite and >= 0"));
    }
    let shift = constants.gyromagnetic_ratio * b0;
    Ok(EsrLines {
        f_minus: (constants.zero_field_splitting - shift).abs(),
        f_plus: constants.zero_field_splitting + shift,
    })
}

/// Probability of leaving m_s = 0 after driving for `t` at Rabi frequency
/// `f1` and detuning `detuning` (both Hz).
pub fn rabi_population(t: f64, f1: f64, detuning: f64) -> f64 {
    let omega2 = f1 * f1 + detuning * detuning;
    if omega2 == 0.0 {
        return 0.0;
    }
    f1 * f1 / omega2 * (PI * omega2.sqrt() * t).sin().powi(2)
}

/// Pulse-averaged transfer probability: the mean of [`rabi_population`] over [0, T].
fn mean_population(pulse_duration: f64, f1: f64, detuning: f64) -> f64 {
    let omega2 = f1 * f1 + detuning * detuning;
    if omega2 == 0.0 {
        return 0.0;
    }
    let x = 2.0 * PI * omega2.sqrt() * pulse_duration;
    f1 * f1 / omega2 * 0.5 * (1.0 - x.sin() / x)
}

/// PL contrast I_sig / I_ref for each drive frequency under a pulse of the
/// given duration (readout integrates over the pulse).
pub fn odmr_spectrum(
    drive_freqs: &[f64],
    f0: f64,
    f1: f64,
    pulse_duration: f64,
    contrast_depth: f64,
) -> Result<Vec<f64>> {
    if !(pulse_duration > 0.0) {
        return Err(Error::invalid("pulse_duration", "must be > 0"));
    }
    if !(0.0..=1.0).contains(&contrast_depth) {
        return Err(Error::invalid("contrast_depth", "must lie in [0, 1]"));
    }
    if !(f1 >= 0.0) {
        return Err(Error::invalid("f1", "must be >= 0"));
    }
    Ok(drive_freqs
        .iter()
        .map(|f| 1.0 - contrast_depth * mean_population(pulse_duration, f1, f - f0))
        .collect())
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::invalid("times", "need at least 2 samples"));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::invalid("times", "must be strictly increasing"));
    }
    let uniform = times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * dt.max(times[0].abs() * 1e-7));
    if !uniform {
        return Err(Error::invalid("times", "must be uniformly spaced"));
    }
    Ok(dt)
}

/// Mean resonant Rabi signal of an ensemble with the given Rabi frequencies.
pub fn ensemble_rabi(f1_samples: &[f64], times: &[f64]) -> Result<TimeSeries> {
    if f1_samples.is_empty() {
        return Err(Error::invalid("f1_samples", "must be nonempty"));
    }
    let dt = uniform_step(times)?;
    let n = f1_samples.len() as f64;
    let samples = times
        .iter()
        .map(|&t| f1_samples.iter().map(|&f1| rabi_population(t, f1, 0.0)).sum::<f64>() / n)
        .collect();
    TimeSeries::new(samples, dt, times[0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelState {
    pub bloch: [f64; 3],
}

impl TwoLevelState {
    /// Optically initialized m_s = 0.
    pub const fn ground() -> Self {
        Self { bloch: [0.0, 0.0, -1.0] }
    }

    pub fn norm(&self) -> f64 {
        self.bloch.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Population of the driven level, (1 + z) / 2.
    pub fn excited_population(&self) -> f64 {
        0.5 * (1.0 + self.bloch[2])
    }

    /// Rotation by `angle` about the unit vector `axis` (Rodrigues).
    fn rotate(&mut self, axis: [f64; 3], angle: f64) {
        let [ux, uy, uz] = axis;
        let [x, y, z] = self.bloch;
        let (s, c) = angle.sin_cos();
        let dot = ux * x + uy * y + uz * z;
        let cross = [uy * z - uz * y, uz * x - ux * z, ux * y - uy * x];
        self.bloch = [
            x * c + cross[0] * s + ux * dot * (1.0 - c),
            y * c + cross[1] * s + uy * dot * (1.0 - c),
            z * c + cross[2] * s + uz * dot * (1.0 - c),
        ];
    }

    fn rotate_z(&mut self, angle: f64) {
        let (s, c) = angle.sin_cos();
        let [x, y, z] = self.bloch;
        self.bloch = [x * c - y * s, x * s + y * c, z];
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    /// Resonant drive at Rabi frequency `rabi_rate` (Hz) about the equatorial
    /// axis at angle `phase_axis` (rad) from x.
    MwPulse { rabi_rate: f64, phase_axis: f64 },
    FreeEvolution,
    ReadoutMarker,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseEvent {
    pub kind: EventKind,
    pub duration: f64,
}

impl PulseEvent {
    pub fn pulse(rabi_rate: f64, phase_axis: f64, duration: f64) -> Self {
        Self {
            kind: EventKind::MwPulse { rabi_rate, phase_axis },
            duration,
        }
    }

    pub fn free(duration: f64) -> Self {
        Self {
            kind: EventKind::FreeEvolution,
            duration,
        }
    }

    pub fn readout() -> Self {
        Self {
            kind: EventKind::ReadoutMarker,
            duration: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseSequence {
    pub events: Vec<PulseEvent>,
}

impl PulseSequence {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            if !(e.duration >= 0.0 && e.duration.is_finite()) {
                return Err(Error::invalid(&format!("events[{i}].duration"), "must be finite and >= 0"));
            }
            if let EventKind::MwPulse { rabi_rate, phase_axis } = e.kind {
                if !(rabi_rate >= 0.0) || !phase_axis.is_finite() {
                    return Err(Error::invalid(&format!("events[{i}]"), "bad pulse rate or phase"));
                }
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.events.iter().map(|e| e.duration).sum()
    }

    pub fn pi_pulse_count(&self, f1: f64) -> usize {
        let t_pi = 0.5 / f1;
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::MwPulse { .. }) && (e.duration - t_pi).abs() < 1e-6 * t_pi)
            .count()
    }
}

/// Phase of the closing pi/2 pulse relative to the opening one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadoutConvention {
    /// Closing pulse 90 deg shifted: z = sin(accumulated phase), linear in the signal.
    #[default]
    Sin,
    /// Closing pulse in phase: z = cos(accumulated phase).
    Cos,
}

const XY8_PHASES: [f64; 8] = [0.0, PI / 2.0, 0.0, PI / 2.0, PI / 2.0, 0.0, PI / 2.0, 0.0];

/// XY8-N block with pi-pulse centers `tau = 1/(2 f_casr)` apart and finite
/// pulses of length 1/(2 f1). Ends in a readout marker.
pub fn make_xy8(n_repeats: usize, f_casr: f64, f1: f64, include_pi2: bool) -> Result<PulseSequence> {
    make_xy8_with_readout(n_repeats, f_casr, f1, include_pi2, ReadoutConvention::Sin)
}

pub fn make_xy8_with_readout(
    n_repeats: usize,
    f_casr: f64,
    f1: f64,
    include_pi2: bool,
    convention: ReadoutConvention,
) -> Result<PulseSequence> {
    if n_repeats == 0 {
        return Err(Error::invalid("n_repeats", "must be >= 1"));
    }
    if !(f_casr > 0.0 && f_casr.is_finite()) {
        return Err(Error::invalid("f_casr", "must be finite and > 0"));
    }
    if !(f1 > 0.0 && f1.is_finite()) {
        return Err(Error::invalid("f1", "must be finite and > 0"));
    }
    let tau = 0.5 / f_casr;
    let t_pi = 0.5 / f1;
    if t_pi >= tau {
        return Err(Error::PulsesOverlap {
            pulse_s: t_pi,
            spacing_s: tau,
        });
    }
    let t_half = 0.25 / f1;
    let edge_gap = tau / 2.0 - t_pi / 2.0;
    let mut events = Vec::with_capacity(16 * n_repeats + 6);
    if include_pi2 {
        events.push(PulseEvent::pulse(f1, 0.0, t_half));
    }
    events.push(PulseEvent::free(edge_gap));
    for k in 0..8 * n_repeats {
        if k > 0 {
            events.push(PulseEvent::free(tau - t_pi));
        }
        events.push(PulseEvent::pulse(f1, XY8_PHASES[k % 8], t_pi));
    }
    events.push(PulseEvent::free(edge_gap));
    if include_pi2 {
        let closing = match convention {
            ReadoutConvention::Sin => PI / 2.0,
            ReadoutConvention::Cos => 0.0,
        };
        events.push(PulseEvent::pulse(f1, closing, t_half));
    }
    events.push(PulseEvent::readout());
    Ok(PulseSequence { events })
}

/// AC test field, specified directly as its projection on the NV axis:
/// B(t) = amplitude * cos(2 pi frequency t + phase).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AcSignal {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl AcSignal {
    pub fn none() -> Self {
        Self::default()
    }

    /// Integral of B over [t, t + dt] (T s), exact for the sinusoid.
    fn integral(&self, t: f64, dt: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        if self.frequency == 0.0 {
            return self.amplitude * self.phase.cos() * dt;
        }
        let w = 2.0 * PI * self.frequency;
        // sin(a + w dt) - sin(a) = 2 cos(a + w dt / 2) sin(w dt / 2)
        let mid = w * (t + 0.5 * dt) + self.phase;
        self.amplitude * 2.0 * mid.cos() * (0.5 * w * dt).sin() / w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationOptions {
    /// Static drive detuning (Hz).
    pub detuning: f64,
    /// Absolute time at the first event (s); sets the signal phase.
    pub t_start: f64,
    /// Sub-steps per signal period inside finite pulses.
    pub steps_per_signal_period: usize,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            detuning: 0.0,
            t_start: 0.0,
            steps_per_signal_period: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    /// Time at the end of each event.
    pub times: Vec<f64>,
    /// State at the end of each event.
    pub states: Vec<TwoLevelState>,
    /// Bloch z sampled at each readout marker.
    pub readouts: Vec<f64>,
}

/// Piecewise evolution through `seq`, recording the state after every event.
pub fn propagate(
    state: TwoLevelState,
    seq: &PulseSequence,
    signal: &AcSignal,
    constants: &NvConstants,
) -> Result<Trajectory> {
    propagate_with(state, seq, signal, constants, &PropagationOptions::default())
}

pub fn propagate_with(
    state: TwoLevelState,
    seq: &PulseSequence,
    signal: &AcSignal,
    constants: &NvConstants,
    options: &PropagationOptions,
) -> Result<Trajectory> {
    seq.validate()?;
    constants.validate()?;
    let mut traj = Trajectory {
        times: Vec::with_capacity(seq.events.len()),
        states: Vec::with_capacity(seq.events.len()),
        readouts: Vec::new(),
    };
    let mut engine = Engine::new(state, signal, constants, options);
    for e in &seq.events {
        if engine.apply(e) {
            traj.readouts.push(engine.state.bloch[2]);
        }
        traj.times.push(engine.t);
        traj.states.push(engine.state);
    }
    Ok(traj)
}

/// Number of rotation sub-steps used for a pulse of length `dt`.
fn pulse_substeps(dt: f64, signal: &AcSignal, steps_per_signal_period: usize) -> usize {
    if signal.amplitude != 0.0 && signal.frequency > 0.0 {
        let per = steps_per_signal_period.max(1) as f64;
        ((dt * signal.frequency * per).ceil() as usize).max(4)
    } else {
        1
    }
}

#[derive(Debug, Clone, Copy)]
struct Substep {
    /// Drive rotation components (rad) for pulses; `None` for free evolution.
    drive: Option<(f64, f64)>,
    detuning_phase: f64,
    /// The signal phase over the step is `gain * cos(a + offset)`, where `a`
    /// is the signal phase at the start of the block.
    gain: f64,
    cos_offset: f64,
    sin_offset: f64,
    /// Coherence decay factor applied after a free step.
    decay: f64,
}

/// A pulse sequence flattened into sub-steps whose signal dependence is
/// reduced to the signal phase at the block start. Replaying it for many
/// block start times costs one sin/cos per block instead of per step.
#[derive(Debug, Clone)]
struct CompiledSequence {
    steps: Vec<Substep>,
    omega: f64,
    signal_phase: f64,
    frequency: f64,
}

impl CompiledSequence {
    fn new(
        seq: &PulseSequence,
        signal: &AcSignal,
        constants: &NvConstants,
        options: &PropagationOptions,
    ) -> Self {
        let w = 2.0 * PI * signal.frequency;
        let two_pi_gamma = 2.0 * PI * constants.gyromagnetic_ratio;
        let mut steps = Vec::new();
        let mut tau = 0.0;
        let mut free_elapsed = 0.0;
        let mut push = |tau: f64, h: f64, drive: Option<(f64, f64)>, decay: f64| {
            let (gain, offset) = if w == 0.0 {
                (signal.amplitude * h, 0.0)
            } else {
                (2.0 * signal.amplitude * (0.5 * w * h).sin() / w, w * (tau + 0.5 * h))
            };
            let (s, c) = offset.sin_cos();
            steps.push(Substep {
                drive,
                detuning_phase: 2.0 * PI * options.detuning * h,
                gain: two_pi_gamma * gain,
                cos_offset: c,
                sin_offset: s,
                decay,
            });
        };
        for e in &seq.events {
            match e.kind {
                EventKind::ReadoutMarker => {}
                EventKind::FreeEvolution => {
                    let decay = match constants.t2_envelope {
                        Some(env) => {
                            let d = |t: f64| (t / env.t2).powf(env.exponent);
                            (d(free_elapsed) - d(free_elapsed + e.duration)).exp()
                        }
                        None => 1.0,
                    };
                    push(tau, e.duration, None, decay);
                    free_elapsed += e.duration;
                }
                EventKind::MwPulse { rabi_rate, phase_axis } => {
                    let n = pulse_substeps(e.duration, signal, options.steps_per_signal_period);
                    let h = e.duration / n as f64;
                    let (sp, cp) = phase_axis.sin_cos();
                    let w1 = 2.0 * PI * rabi_rate * h;
                    for k in 0..n {
                        push(tau + k as f64 * h, h, Some((w1 * cp, w1 * sp)), 1.0);
                    }
                }
            }
            tau += e.duration;
        }
        Self {
            steps,
            omega: w,
            signal_phase: signal.phase,
            frequency: signal.frequency,
        }
    }

    /// Final state for a block starting at absolute time `t_start`.
    fn evolve(&self, state: TwoLevelState, t_start: f64) -> TwoLevelState {
        // Reduce the phase in cycles first to keep precision for long runs.
        let a = if self.omega == 0.0 {
            self.signal_phase
        } else {
            2.0 * PI * (self.frequency * t_start).fract() + self.signal_phase
        };
        let (sa, ca) = a.sin_cos();
        let mut st = state;
        for step in &self.steps {
            // cos(a + b) = cos a cos b - sin a sin b
            let wz = step.detuning_phase + step.gain * (ca * step.cos_offset - sa * step.sin_offset);
            match step.drive {
                None => {
                    st.rotate_z(wz);
                    if step.decay != 1.0 {
                        st.bloch[0] *= step.decay;
                        st.bloch[1] *= step.decay;
                    }
                }
                Some((wx, wy)) => {
                    let angle = (wx * wx + wy * wy + wz * wz).sqrt();
                    if angle > 0.0 {
                        st.rotate([wx / angle, wy / angle, wz / angle], angle);
                    }
                }
            }
        }
        st
    }
}

struct Engine<'a> {
    state: TwoLevelState,
    t: f64,
    free_elapsed: f64,
    signal: &'a AcSignal,
    constants: &'a NvConstants,
    options: &'a PropagationOptions,
}

impl<'a> Engine<'a> {
    fn new(
        state: TwoLevelState,
        signal: &'a AcSignal,
        constants: &'a NvConstants,
        options: &'a PropagationOptions,
    ) -> Self {
        Self {
            state,
            t: options.t_start,
            free_elapsed: 0.0,
            signal,
            constants,
            options,
        }
    }

    /// Z-rotation angle accumulated over [t, t + dt] from detuning and signal.
    fn z_phase(&self, t: f64, dt: f64) -> f64 {
        2.0 * PI * (self.options.detuning * dt + self.constants.gyromagnetic_ratio * self.signal.integral(t, dt))
    }

    /// Returns true for readout markers.
    fn apply(&mut self, e: &PulseEvent) -> bool {
        let dt = e.duration;
        match e.kind {
            EventKind::ReadoutMarker => {
                self.t += dt;
                return true;
            }
            EventKind::FreeEvolution => {
                let phi = self.z_phase(self.t, dt);
                self.state.rotate_z(phi);
                if let Some(env) = self.constants.t2_envelope {
                    let decay = |t: f64| (t / env.t2).powf(env.exponent);
                    let f = (decay(self.free_elapsed) - decay(self.free_elapsed + dt)).exp();
                    self.state.bloch[0] *= f;
                    self.state.bloch[1] *= f;
                }
                self.free_elapsed += dt;
            }
            EventKind::MwPulse { rabi_rate, phase_axis } => {
                let steps = pulse_substeps(dt, self.signal, self.options.steps_per_signal_period);
                let h = dt / steps as f64;
                let (sp, cp) = phase_axis.sin_cos();
                for k in 0..steps {
                    let t = self.t + k as f64 * h;
                    let wx = 2.0 * PI * rabi_rate * cp * h;
                    let wy = 2.0 * PI * rabi_rate * sp * h;
                    let wz = self.z_phase(t, h);
                    let angle = (wx * wx + wy * wy + wz * wz).sqrt();
                    if angle > 0.0 {
                        self.state.rotate([wx / angle, wy / angle, wz / angle], angle);
                    }
                }
            }
        }
        self.t += dt;
        false
    }
}

/// Affine PL readout I_contrast = 1 - depth (1 + z)/2, plus optional white noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutModel {
    pub contrast_depth: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self {
            contrast_depth: 0.03,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl ReadoutModel {
    pub fn contrast(&self, bloch_z: f64) -> f64 {
        1.0 - self.contrast_depth * 0.5 * (1.0 + bloch_z)
    }
}

/// Optical readout and re-initialization dead time after each decoupling block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadTime {
    /// Delay between the end of the sequence and the laser pulse (s).
    pub pre_laser_delay: f64,
    /// Laser (AOM) pulse length (s); the DAQ readout window sits inside it.
    pub laser_pulse: f64,
    /// Delay between the end of the laser pulse and the next sequence (s).
    pub post_laser_delay: f64,
}

impl Default for DeadTime {
    fn default() -> Self {
        Self {
            pre_laser_delay: 2e-6,
            laser_pulse: 20e-6,
            post_laser_delay: 1e-6,
        }
    }
}

impl DeadTime {
    pub fn total(&self) -> f64 {
        self.pre_laser_delay + self.laser_pulse + self.post_laser_delay
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CasrConfig {
    pub total_time: f64,
    pub f_signal: f64,
    /// Field amplitude along the NV axis (T).
    pub signal_amplitude: f64,
    pub signal_phase: f64,
    /// Fractional error of the signal generator, in ppm.
    pub generator_offset_ppm: f64,
    pub f_casr: f64,
    pub n_repeats: usize,
    pub f1: f64,
    pub readout: ReadoutModel,
    pub convention: ReadoutConvention,
    pub dead_time: DeadTime,
    pub constants: NvConstants,
    pub steps_per_signal_period: usize,
}

impl Default for CasrConfig {
    fn default() -> Self {
        Self {
            total_time: 1.0,
            f_signal: 29.992e6,
            signal_amplitude: 100e-9,
            signal_phase: 0.0,
            generator_offset_ppm: 0.0,
            f_casr: 30e6,
            n_repeats: 6,
            f1: 136.3e6,
            readout: ReadoutModel::default(),
            convention: ReadoutConvention::Sin,
            dead_time: DeadTime::default(),
            constants: NvConstants::default(),
            steps_per_signal_period: 32,
        }
    }
}

impl CasrConfig {
    /// Checks every parameter, including pulse overlap, without simulating.
    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Block period rounded up to whole f_casr cycles.
    pub fn block_period(&self) -> Result<f64> {
        self.plan().map(|(_, period, _)| period)
    }

    fn plan(&self) -> Result<(PulseSequence, f64, usize)> {
        self.constants.validate()?;
        if !(self.signal_amplitude >= 0.0 && self.signal_amplitude.is_finite()) {
            return Err(Error::invalid("signal_amplitude", "must be finite and >= 0"));
        }
        if !(self.f_signal >= 0.0 && self.f_signal.is_finite()) {
            return Err(Error::invalid("f_signal", "must be finite and >= 0"));
        }
        if !self.signal_phase.is_finite() || !self.generator_offset_ppm.is_finite() {
            return Err(Error::invalid("signal_phase", "phase and generator offset must be finite"));
        }
        if !(0.0..=1.0).contains(&self.readout.contrast_depth) {
            return Err(Error::invalid("contrast_depth", "must lie in [0, 1]"));
        }
        if !(self.readout.noise_std >= 0.0 && self.readout.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std", "must be finite and >= 0"));
        }
        let dead = self.dead_time;
        if !(dead.pre_laser_delay >= 0.0 && dead.laser_pulse >= 0.0 && dead.post_laser_delay >= 0.0) {
            return Err(Error::invalid("dead_time", "delays must be >= 0"));
        }
        if self.steps_per_signal_period == 0 {
            return Err(Error::invalid("steps_per_signal_period", "must be >= 1"));
        }
        let seq = make_xy8_with_readout(self.n_repeats, self.f_casr, self.f1, true, self.convention)?;
        let cycles = ((seq.duration() + dead.total()) * self.f_casr).ceil();
        let block_period = cycles / self.f_casr;
        if !(self.total_time.is_finite() && self.total_time >= 2.0 * block_period) {
            return Err(Error::invalid("total_time", "must cover at least two block periods"));
        }
        let n_blocks = (self.total_time / block_period + 1e-9).floor() as usize;
        Ok((seq, block_period, n_blocks))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CasrRun {
    /// One PL contrast sample per block.
    pub pl: TimeSeries,
    /// Block repetition period, an integer number of 1/f_casr cycles (s).
    pub block_period: f64,
    pub sequence: PulseSequence,
    /// Expected down-converted frequency |f_signal - f_casr| (Hz).
    pub expected_frequency: f64,
}

/// Repeated XY8-N blocks, each followed by readout and re-initialization.
/// The block period is rounded up to a whole number of f_casr cycles so that
/// the readout stays phase-locked to the sequence clock.
pub fn casr_run(cfg: &CasrConfig) -> Result<CasrRun> {
    let (seq, block_period, n_blocks) = cfg.plan()?;

    let signal = AcSignal {
        amplitude: cfg.signal_amplitude,
        frequency: cfg.f_signal * (1.0 + 1e-6 * cfg.generator_offset_ppm),
        phase: cfg.signal_phase,
    };
    let options = PropagationOptions {
        steps_per_signal_period: cfg.steps_per_signal_period,
        ..PropagationOptions::default()
    };
    let compiled = CompiledSequence::new(&seq, &signal, &cfg.constants, &options);
    let z: Vec<f64> = (0..n_blocks)
        .into_par_iter()
        .map(|k| compiled.evolve(TwoLevelState::ground(), k as f64 * block_period).bloch[2])
        .collect();

    let mut samples: Vec<f64> = z.iter().map(|&z| cfg.readout.contrast(z)).collect();
    if cfg.readout.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.readout.seed);
        let noise = Normal::new(0.0, cfg.readout.noise_std).map_err(|e| Error::invalid("noise_std", e.to_string()))?;
        for s in &mut samples {
            *s += noise.sample(&mut rng);
        }
    }
    Ok(CasrRun {
        pl: TimeSeries::new(samples, block_period, 0.0)?,
        block_period,
        sequence: seq,
        expected_frequency: (signal.frequency - cfg.f_casr).abs(),
    })
}
