//! Drive-chain model of the tuned loop.
//!
//! The source (50 ohm behind transmission line 1) sees the loop inductor in
//! series with the blocking capacitor and an open-terminated phase shifter
//! reached through transmission line 2. Every line shares `Z0`, so the
//! far-side network is composed in the reflection-coefficient domain, which
//! keeps the open termination finite until the very last step.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::constants::Z0;
use crate::error::{Error, Result};

pub type ComplexImpedance = Complex64;

/// |1 - Gamma| below this is treated as an open-circuit pole.
const POLE_EPS: f64 = 1e-13;

/// Default coarse grid for [`optimal_phase`].
pub const DEFAULT_TUNE_GRID: usize = 2048;

/// Termination of a line segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    Open,
    Impedance(ComplexImpedance),
}

/// How the far side of the blocking capacitor is terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationMode {
    /// Transmission line 2 into an open-terminated tunable phase shifter.
    OpenPhaseShifter,
    /// Transmission line 2 into a fixed 50 ohm resistor to ground.
    Fixed50Ohm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveChain {
    pub source_impedance: ComplexImpedance,
    /// Available power of the source (W).
    pub available_power: f64,
    /// Fixed electrical delay of transmission line 2 (rad).
    pub line2_phase: f64,
    /// Phase-shifter setting used by [`DriveChain::loop_current_at_setting`] (rad).
    pub phase_shifter_phi: f64,
    /// Series blocking capacitor (F). `None` is the C -> infinity limit (a short).
    pub blocking_capacitance: Option<f64>,
    /// Loop plus bond-wire inductance (H).
    pub loop_inductance: f64,
    /// Shunt from the source-side loop node to ground (F).
    pub parasitic_shunt_capacitance: f64,
    /// Uniform one-way attenuation of line 1, line 2 and the phase shifter (dB each).
    pub line_loss_db: f64,
    pub termination: TerminationMode,
}

impl Default for DriveChain {
    fn default() -> Self {
        Self {
            source_impedance: Complex64::new(Z0, 0.0),
            available_power: 34.8,
            line2_phase: 0.0,
            phase_shifter_phi: 0.0,
            blocking_capacitance: Some(0.5e-12),
            loop_inductance: 5.7e-9,
            parasitic_shunt_capacitance: 0.0,
            line_loss_db: 0.0,
            termination: TerminationMode::OpenPhaseShifter,
        }
    }
}

impl DriveChain {
    pub fn validate(&self) -> Result<()> {
        if !(self.available_power > 0.0 && self.available_power.is_finite()) {
            return Err(Error::invalid("available_power", "must be finite and > 0"));
        }
        if let Some(c) = self.blocking_capacitance {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid("blocking_capacitance", "must be finite and > 0"));
            }
        }
        if !(self.loop_inductance >= 0.0 && self.loop_inductance.is_finite()) {
            return Err(Error::invalid("loop_inductance", "must be finite and >= 0"));
        }
        if !(self.parasitic_shunt_capacitance >= 0.0 && self.parasitic_shunt_capacitance.is_finite()) {
            return Err(Error::invalid("parasitic_shunt_capacitance", "must be finite and >= 0"));
        }
        if !(self.line_loss_db >= 0.0 && self.line_loss_db.is_finite()) {
            return Err(Error::invalid("line_loss_db", "must be finite and >= 0"));
        }
        if !(self.source_impedance.re > 0.0 && self.source_impedance.is_finite()) {
            return Err(Error::invalid("source_impedance", "real part must be > 0"));
        }
        if !self.line2_phase.is_finite() || !self.phase_shifter_phi.is_finite() {
            return Err(Error::invalid("line2_phase", "phases must be finite"));
        }
        Ok(())
    }

    /// Peak source EMF that delivers `available_power` into a conjugate-matched load.
    pub fn source_emf(&self) -> f64 {
        (8.0 * self.available_power * self.source_impedance.re).sqrt()
    }

    /// Loop current at the chain's own phase-shifter setting.
    pub fn loop_current_at_setting(&self, omega: f64) -> Result<f64> {
        loop_current(self.phase_shifter_phi, omega, self)
    }

    fn with_termination(&self, termination: TerminationMode) -> Self {
        Self {
            termination,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneResult {
    /// Optimal phase-shifter setting in [0, pi) (rad).
    pub phi_opt: f64,
    pub zin_at_opt: ComplexImpedance,
    /// Peak loop current amplitude (A).
    pub loop_current_amplitude: f64,
    pub reflection_coefficient_magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSample {
    pub phi: f64,
    /// `None` when the sample sits on an impedance pole.
    pub zin: Option<ComplexImpedance>,
    /// Loop current amplitude (A); zero on a pole, where the branch is open.
    pub loop_current: f64,
}

impl SweepSample {
    pub fn zin_abs(&self) -> f64 {
        self.zin.map_or(f64::INFINITY, |z| z.norm())
    }
}

fn db_to_nepers(db: f64) -> f64 {
    db * std::f64::consts::LN_10 / 20.0
}

fn reflection_of(load: Load, z0: f64) -> Result<Complex64> {
    match load {
        Load::Open => Ok(Complex64::new(1.0, 0.0)),
        Load::Impedance(z) => {
            let den = z + z0;
            if den.norm() == 0.0 {
                return Err(Error::ImpedancePole(format!("load {z} equals -Z0")));
            }
            Ok((z - z0) / den)
        }
    }
}

/// Slides a reflection coefficient back along a line of the given electrical
/// length and one-way loss.
fn slide(gamma: Complex64, electrical_phase: f64, loss_db: f64) -> Complex64 {
    let alpha = db_to_nepers(loss_db);
    gamma * Complex64::new(-2.0 * alpha, -2.0 * electrical_phase).exp()
}

fn impedance_from_reflection(gamma: Complex64, z0: f64, context: &str) -> Result<ComplexImpedance> {
    let den = Complex64::new(1.0, 0.0) - gamma;
    if den.norm() < POLE_EPS {
        return Err(Error::ImpedancePole(context.to_string()));
    }
    Ok(z0 * (Complex64::new(1.0, 0.0) + gamma) / den)
}

/// Input impedance of a uniform line of characteristic impedance `z0`,
/// electrical length `electrical_phase` and one-way attenuation `loss_db`,
/// terminated in `load`.
pub fn line_transform(load: Load, z0: f64, electrical_phase: f64, loss_db: f64) -> Result<ComplexImpedance> {
    if !(z0 > 0.0) {
        return Err(Error::invalid("z0", "must be > 0"));
    }
    if !electrical_phase.is_finite() {
        return Err(Error::invalid("electrical_phase", "must be finite"));
    }
    if !(loss_db >= 0.0) {
        return Err(Error::invalid("loss_db", "must be >= 0"));
    }
    let gamma = slide(reflection_of(load, z0)?, electrical_phase, loss_db);
    impedance_from_reflection(gamma, z0, "lossless open line at electrical length 0 mod pi")
}

fn far_side_reflection(phi: f64, chain: &DriveChain) -> Result<Complex64> {
    let loss = chain.line_loss_db;
    let at_line2_end = match chain.termination {
        TerminationMode::OpenPhaseShifter => slide(Complex64::new(1.0, 0.0), phi, loss),
        TerminationMode::Fixed50Ohm => reflection_of(Load::Impedance(Complex64::new(Z0, 0.0)), Z0)?,
    };
    Ok(slide(at_line2_end, chain.line2_phase, loss))
}

/// Impedance presented to the blocking capacitor by line 2 and the phase
/// shifter: `-i Z0 cot(phi + phi0)` when lossless.
pub fn z1(phi: f64, chain: &DriveChain) -> Result<ComplexImpedance> {
    if chain.termination != TerminationMode::OpenPhaseShifter {
        return Err(Error::invalid("termination", "z1 is defined for the open phase-shifter termination"));
    }
    far_side_reflection(phi, chain)
        .and_then(|g| impedance_from_reflection(g, Z0, "open phase shifter at phi + phi0 = 0 mod pi"))
}

fn far_side_impedance(phi: f64, chain: &DriveChain) -> Result<ComplexImpedance> {
    far_side_reflection(phi, chain)
        .and_then(|g| impedance_from_reflection(g, Z0, "open phase shifter at phi + phi0 = 0 mod pi"))
}

fn capacitor(omega: f64, c: Option<f64>) -> ComplexImpedance {
    match c {
        Some(c) => Complex64::new(0.0, -1.0 / (omega * c)),
        None => Complex64::new(0.0, 0.0),
    }
}

fn check_omega(omega: f64) -> Result<()> {
    if omega > 0.0 && omega.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("omega", "must be finite and > 0"))
    }
}

/// Impedance the loop sees to its right: `z1` plus the series blocking capacitor.
pub fn z2(phi: f64, omega: f64, chain: &DriveChain) -> Result<ComplexImpedance> {
    check_omega(omega)?;
    Ok(z1(phi, chain)? + capacitor(omega, chain.blocking_capacitance))
}

/// Series branch iwL + capacitor + far side, valid for either termination.
fn branch_impedance(phi: f64, omega: f64, chain: &DriveChain) -> Result<ComplexImpedance> {
    let far = far_side_impedance(phi, chain)?;
    Ok(Complex64::new(0.0, omega * chain.loop_inductance) + capacitor(omega, chain.blocking_capacitance) + far)
}

fn shunt_impedance(omega: f64, chain: &DriveChain) -> Option<ComplexImpedance> {
    (chain.parasitic_shunt_capacitance > 0.0)
        .then(|| Complex64::new(0.0, -1.0 / (omega * chain.parasitic_shunt_capacitance)))
}

/// Impedance seen by the source at the loop terminal.
pub fn zin(phi: f64, omega: f64, chain: &DriveChain) -> Result<ComplexImpedance> {
    check_omega(omega)?;
    let branch = branch_impedance(phi, omega, chain)?;
    Ok(match shunt_impedance(omega, chain) {
        Some(zp) => branch * zp / (branch + zp),
        None => branch,
    })
}

/// Peak current amplitude through the loop inductor (A).
pub fn loop_current(phi: f64, omega: f64, chain: &DriveChain) -> Result<f64> {
    check_omega(omega)?;
    let branch = branch_impedance(phi, omega, chain)?;
    Ok(loop_current_from_branch(branch, omega, chain))
}

fn loop_current_from_branch(branch: ComplexImpedance, omega: f64, chain: &DriveChain) -> f64 {
    // Line 1 is matched to the source, so it only attenuates the Thevenin EMF.
    let emf = chain.source_emf() * 10f64.powf(-chain.line_loss_db / 20.0);
    match shunt_impedance(omega, chain) {
        None => emf / (chain.source_impedance + branch).norm(),
        Some(zp) => {
            let zin = branch * zp / (branch + zp);
            let i_source = emf / (chain.source_impedance + zin);
            (i_source * zp / (zp + branch)).norm()
        }
    }
}

/// Loop current with the phase shifter replaced by a fixed 50 ohm termination.
pub fn fixed_termination_current(omega: f64, chain: &DriveChain) -> Result<f64> {
    loop_current(0.0, omega, &chain.with_termination(TerminationMode::Fixed50Ohm))
}

/// Magnitude of the voltage reflection coefficient of `zin` against `z0`.
pub fn reflection(zin: ComplexImpedance, z0: f64) -> Result<f64> {
    if !(z0 > 0.0) {
        return Err(Error::invalid("z0", "must be > 0"));
    }
    let den = zin + z0;
    if den.norm() == 0.0 {
        return Err(Error::ImpedancePole("zin = -z0".into()));
    }
    Ok(((zin - z0) / den).norm())
}

/// Rabi frequency per square-root watt (Hz/sqrt(W)).
pub fn driving_efficiency(f1: f64, power: f64) -> Result<f64> {
    if !(power > 0.0) {
        return Err(Error::invalid("power", "must be > 0"));
    }
    Ok(f1 / power.sqrt())
}

fn zin_abs_or_inf(phi: f64, omega: f64, chain: &DriveChain) -> f64 {
    match zin(phi, omega, chain) {
        Ok(z) if z.is_finite() => z.norm(),
        _ => f64::INFINITY,
    }
}

fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(PI);
    if w >= PI {
        0.0
    } else {
        w
    }
}

/// Minimizes |Zin| over the phase-shifter setting with the default grid.
pub fn optimal_phase(omega: f64, chain: &DriveChain) -> Result<TuneResult> {
    optimal_phase_with_grid(omega, chain, DEFAULT_TUNE_GRID)
}

/// Coarse uniform scan of phi in [0, pi) followed by golden-section refinement
/// inside the two grid cells around the best sample.
pub fn optimal_phase_with_grid(omega: f64, chain: &DriveChain, n_grid: usize) -> Result<TuneResult> {
    chain.validate()?;
    check_omega(omega)?;
    if chain.termination != TerminationMode::OpenPhaseShifter {
        return Err(Error::invalid(
            "termination",
            "the fixed 50 ohm termination has no tunable phase",
        ));
    }
    if n_grid < 720 {
        return Err(Error::invalid("n_grid", "coarse grid needs at least 720 points"));
    }
    let step = PI / n_grid as f64;
    let samples: Vec<f64> = (0..n_grid).map(|k| zin_abs_or_inf(k as f64 * step, omega, chain)).collect();

    let finite = samples.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || hi - lo <= 1e-12 * hi.max(f64::MIN_POSITIVE) {
        return Err(Error::FlatObjective);
    }
    let best = samples
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();

    let f = |phi: f64| zin_abs_or_inf(phi, omega, chain);
    let phi_star = wrap_phase(golden_section(f, (best as f64 - 1.0) * step, (best as f64 + 1.0) * step, 1e-12));

    let zin_opt = zin(phi_star, omega, chain)?;
    let current = loop_current(phi_star, omega, chain)?;
    Ok(TuneResult {
        phi_opt: phi_star,
        zin_at_opt: zin_opt,
        loop_current_amplitude: current,
        reflection_coefficient_magnitude: reflection(zin_opt, chain.source_impedance.re)?,
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

/// Uniform sweep of phi over [0, pi). Pole samples are flagged, not fatal.
pub fn phi_sweep(omega: f64, chain: &DriveChain, n_points: usize) -> Result<Vec<SweepSample>> {
    chain.validate()?;
    check_omega(omega)?;
    if n_points < 2 {
        return Err(Error::invalid("n_points", "must be >= 2"));
    }
    let step = PI / n_points as f64;
    Ok((0..n_points)
        .map(|k| {
            let phi = k as f64 * step;
            match branch_impedance(phi, omega, chain) {
                Ok(branch) if branch.is_finite() => SweepSample {
                    phi,
                    zin: zin(phi, omega, chain).ok(),
                    loop_current: loop_current_from_branch(branch, omega, chain),
                },
                _ => SweepSample {
                    phi,
                    zin: None,
                    loop_current: 0.0,
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const F: f64 = 2.55e9;

    fn omega() -> f64 {
        2.0 * PI * F
    }

    fn chain_with_phi0(phi0: f64) -> DriveChain {
        DriveChain {
            line2_phase: phi0,
            ..DriveChain::default()
        }
    }

    #[test]
    fn open_line_examples() {
        let z = line_transform(Load::Open, 50.0, PI / 2.0, 0.0).unwrap();
        assert!(z.norm() < 1e-12);
        let z = line_transform(Load::Open, 50.0, PI / 4.0, 0.0).unwrap();
        assert_relative_eq!(z.re, 0.0, epsilon = 1e-12);
        assert_relative_eq!(z.im, -50.0, epsilon = 1e-12);
    }

    #[test]
    fn matched_line_is_transparent() {
        for phase in [0.0, 0.3, 1.7, 4.0] {
            let z = line_transform(Load::Impedance(Complex64::new(50.0, 0.0)), 50.0, phase, 0.0).unwrap();
            assert_relative_eq!(z.re, 50.0, epsilon = 1e-12);
            assert_relative_eq!(z.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn open_line_pole_is_an_error() {
        assert!(matches!(line_transform(Load::Open, 50.0, 0.0, 0.0), Err(Error::ImpedancePole(_))));
        assert!(matches!(line_transform(Load::Open, 50.0, PI, 0.0), Err(Error::ImpedancePole(_))));
        // Loss moves the pole off the real axis.
        assert!(line_transform(Load::Open, 50.0, 0.0, 0.5).unwrap().is_finite());
    }

    #[test]
    fn quarter_wave_inverts_load() {
        let z = line_transform(Load::Impedance(Complex64::new(25.0, 0.0)), 50.0, PI / 2.0, 0.0).unwrap();
        assert_relative_eq!(z.re, 100.0, epsilon = 1e-9);
        assert_relative_eq!(z.im, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn z1_examples() {
        let c = chain_with_phi0(0.3);
        let z = z1(PI / 2.0 - 0.3, &c).unwrap();
        assert!(z.norm() < 1e-12);
        let z = z1(PI / 4.0 - 0.3, &c).unwrap();
        assert_relative_eq!(z.im, -50.0, epsilon = 1e-9);
        let z = z1(3.0 * PI / 4.0 - 0.3, &c).unwrap();
        assert_relative_eq!(z.im, 50.0, epsilon = 1e-9);
        assert!(matches!(z1(-0.3, &c), Err(Error::ImpedancePole(_))));
    }

    #[test]
    fn z1_lossy_has_positive_real_part() {
        let c = DriveChain {
            line_loss_db: 0.5,
            ..DriveChain::default()
        };
        for k in 0..50 {
            let z = z1(k as f64 * PI / 50.0, &c).unwrap();
            assert!(z.re > 0.0);
        }
    }

    #[test]
    fn z1_rejects_fixed_termination() {
        let c = DriveChain {
            termination: TerminationMode::Fixed50Ohm,
            ..DriveChain::default()
        };
        assert!(matches!(z1(0.5, &c), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn z2_examples() {
        let c = DriveChain::default();
        let xc = 1.0 / (omega() * 0.5e-12);
        assert_relative_eq!(xc, 124.8, epsilon = 0.05);
        let z = z2(PI / 2.0, omega(), &c).unwrap();
        assert_relative_eq!(z.im, -xc, epsilon = 1e-9);
        let z = z2(PI / 4.0, omega(), &c).unwrap();
        assert_relative_eq!(z.im, -(50.0 + xc), epsilon = 1e-9);
        assert_relative_eq!(z.im, -174.8, epsilon = 0.05);

        let shorted = DriveChain {
            blocking_capacitance: None,
            ..c.clone()
        };
        let a = z2(1.1, omega(), &shorted).unwrap();
        let b = z1(1.1, &shorted).unwrap();
        assert_eq!(a, b);
        // A huge capacitor converges to the same place.
        let big = DriveChain {
            blocking_capacitance: Some(1.0),
            ..c
        };
        assert!((z2(1.1, omega(), &big).unwrap() - b).norm() < 1e-9);
    }

    #[test]
    fn zin_cancels_at_analytic_phase() {
        let c = DriveChain::default();
        let w = omega();
        let x = w * c.loop_inductance - 1.0 / (w * 0.5e-12);
        // cot(phi) = x / Z0
        let phi = (Z0 / x).atan().rem_euclid(PI);
        let z = zin(phi, w, &c).unwrap();
        assert!(z.norm() < 1e-9, "{z}");
    }

    #[test]
    fn zin_degenerate_chain() {
        let c = DriveChain {
            loop_inductance: 0.0,
            blocking_capacitance: None,
            ..DriveChain::default()
        };
        assert!(zin(PI / 2.0, omega(), &c).unwrap().norm() < 1e-12);
    }

    #[test]
    fn zin_fixed_termination() {
        let c = DriveChain {
            termination: TerminationMode::Fixed50Ohm,
            line2_phase: 0.7,
            ..DriveChain::default()
        };
        let w = omega();
        let z = zin(0.123, w, &c).unwrap();
        assert_relative_eq!(z.re, 50.0, epsilon = 1e-9);
        assert_relative_eq!(z.im, w * 5.7e-9 - 1.0 / (w * 0.5e-12), epsilon = 1e-9);
    }

    #[test]
    fn zin_with_parasitic_shunt_is_parallel_combination() {
        let c = DriveChain {
            parasitic_shunt_capacitance: 50e-15,
            ..DriveChain::default()
        };
        let w = omega();
        let bare = DriveChain {
            parasitic_shunt_capacitance: 0.0,
            ..c.clone()
        };
        let zb = zin(0.9, w, &bare).unwrap();
        let zp = Complex64::new(0.0, -1.0 / (w * 50e-15));
        let expect = 1.0 / (1.0 / zb + 1.0 / zp);
        assert!((zin(0.9, w, &c).unwrap() - expect).norm() < 1e-9);
    }

    #[test]
    fn optimal_phase_lossless() {
        let c = chain_with_phi0(0.25);
        let r = optimal_phase(omega(), &c).unwrap();
        assert!(r.zin_at_opt.norm() < 1e-6, "{}", r.zin_at_opt);
        assert!((0.0..PI).contains(&r.phi_opt));
        let x = omega() * 5.7e-9 - 1.0 / (omega() * 0.5e-12);
        let analytic = (Z0 / x).atan().rem_euclid(PI);
        assert!(((r.phi_opt + 0.25).rem_euclid(PI) - analytic).abs() < 1e-6);
        // Zin ~ 0 is a short: total reflection.
        assert_relative_eq!(r.reflection_coefficient_magnitude, 1.0, epsilon = 1e-6);
        let emf = c.source_emf();
        assert_relative_eq!(r.loop_current_amplitude, emf / 50.0, max_relative = 1e-6);
    }

    #[test]
    fn optimal_phase_with_loss_moves_little() {
        let lossless = optimal_phase(omega(), &DriveChain::default()).unwrap();
        let lossy = optimal_phase(
            omega(),
            &DriveChain {
                line_loss_db: 1.0,
                ..DriveChain::default()
            },
        )
        .unwrap();
        assert!(lossy.zin_at_opt.norm() > 0.0);
        let d = (lossy.phi_opt - lossless.phi_opt).abs();
        assert!(d.min(PI - d) < 5f64.to_radians());
    }

    #[test]
    fn optimal_phase_rejects_fixed_termination() {
        let c = DriveChain {
            termination: TerminationMode::Fixed50Ohm,
            ..DriveChain::default()
        };
        assert!(matches!(optimal_phase(omega(), &c), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn optimal_phase_flat_objective() {
        // Enough loss that the phase shifter is invisible.
        let c = DriveChain {
            line_loss_db: 400.0,
            ..DriveChain::default()
        };
        assert!(matches!(optimal_phase(omega(), &c), Err(Error::FlatObjective)));
    }

    #[test]
    fn sweep_contract() {
        let s = phi_sweep(omega(), &DriveChain::default(), 2).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].phi < s[1].phi);
        assert!(s[0].zin.is_none(), "phi = 0 is the open-line pole");
        assert_eq!(s[0].loop_current, 0.0);
        assert!(phi_sweep(omega(), &DriveChain::default(), 1).is_err());
    }

    #[test]
    fn sweep_degenerate_peaks_at_quarter_wave() {
        let c = DriveChain {
            loop_inductance: 0.0,
            blocking_capacitance: None,
            ..DriveChain::default()
        };
        let s = phi_sweep(omega(), &c, 360).unwrap();
        let best = s.iter().max_by(|a, b| a.loop_current.total_cmp(&b.loop_current)).unwrap();
        assert_relative_eq!(best.phi, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sweep_maximum_matches_optimizer() {
        let c = chain_with_phi0(0.4);
        let n = 1000;
        let s = phi_sweep(omega(), &c, n).unwrap();
        let best = s.iter().max_by(|a, b| a.loop_current.total_cmp(&b.loop_current)).unwrap();
        let opt = optimal_phase(omega(), &c).unwrap();
        let d = (best.phi - opt.phi_opt).abs();
        assert!(d.min(PI - d) <= PI / n as f64);
        let maxima = (0..n)
            .filter(|&k| {
                let prev = s[(k + n - 1) % n].loop_current;
                let next = s[(k + 1) % n].loop_current;
                s[k].loop_current > prev && s[k].loop_current > next
            })
            .count();
        assert_eq!(maxima, 1);
    }

    #[test]
    fn reflection_examples() {
        assert_relative_eq!(reflection(Complex64::new(50.0, 0.0), 50.0).unwrap(), 0.0);
        assert_relative_eq!(reflection(Complex64::new(0.0, 0.0), 50.0).unwrap(), 1.0);
        assert_relative_eq!(reflection(Complex64::new(0.0, 50.0), 50.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(reflection(Complex64::new(-50.0, 0.0), 50.0), Err(Error::ImpedancePole(_))));
    }

    #[test]
    fn driving_efficiency_table_values() {
        let e = driving_efficiency(136.3e6, 34.8).unwrap() / 1e6;
        assert_eq!(format!("{e:.1}"), "23.1");
        let e = driving_efficiency(14.3e6, 0.5).unwrap() / 1e6;
        assert_eq!(format!("{e:.1}"), "20.2");
        assert_eq!(driving_efficiency(7.5e6, 1.0).unwrap(), 7.5e6);
        assert!(driving_efficiency(1.0, 0.0).is_err());
    }

    #[test]
    fn fixed_termination_current_is_lower_than_tuned() {
        let c = DriveChain::default();
        let tuned = optimal_phase(omega(), &c).unwrap().loop_current_amplitude;
        let fixed = fixed_termination_current(omega(), &c).unwrap();
        assert!(tuned > fixed);
    }

    #[test]
    fn validation_names_the_parameter() {
        let c = DriveChain {
            available_power: -1.0,
            ..DriveChain::default()
        };
        match c.validate() {
            Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "available_power"),
            other => panic!("{other:?}"),
        }
    }
}
