use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::magnetics::{
    b1_perp_at, calibrate_standoff, f1_map, homogeneity, inductance_breakdown, offset_ratio, spot_f1_samples,
    FieldSolver,
};
use crate::rf_network::{
    driving_efficiency, fixed_termination_current, optimal_phase_with_grid, phi_sweep, DriveChain, TerminationMode,
};
use crate::signal_analysis::{peak, spectrum_with, SpectrumOptions, TimeSeries, Window};
use crate::spin_dynamics::{casr_run, ensemble_rabi, esr_frequencies, odmr_spectrum, rabi_population};

use super::output::{ensure_dir, num, write_csv};
use super::{RunConfig, Scenario, ScenarioReport};

const GAUSS: f64 = 1e-4;

/// Runs the configured scenario, writes its CSVs and `report.txt`.
pub fn run(cfg: &RunConfig) -> Result<ScenarioReport> {
    match cfg.scenario {
        Scenario::Tune => run_tune(cfg),
        Scenario::Map => run_map(cfg),
        Scenario::Esr => run_esr(cfg),
        Scenario::Rabi => run_rabi(cfg),
        Scenario::Odmr => run_odmr(cfg),
        Scenario::Casr => run_casr(cfg),
        Scenario::Inductance => run_inductance(cfg),
    }
}

fn start(cfg: &RunConfig, scenario: Scenario) -> Result<ScenarioReport> {
    ensure_dir(&cfg.output_dir)?;
    Ok(ScenarioReport::new(scenario, cfg.seed, cfg.echo.clone()))
}

fn finish(cfg: &RunConfig, mut report: ScenarioReport) -> Result<ScenarioReport> {
    report.write(&cfg.output_dir)?;
    Ok(report)
}

fn tunable(chain: &DriveChain) -> DriveChain {
    DriveChain {
        termination: TerminationMode::OpenPhaseShifter,
        ..chain.clone()
    }
}

/// Standoff used for field evaluation; fitted only when `map.calibrate` is set.
fn resolve_standoff(cfg: &RunConfig, report: &mut ScenarioReport) -> Result<f64> {
    if !cfg.map.calibrate {
        report.number("standoff_um", cfg.map.plane.standoff_height * 1e6);
        report.text("standoff_source", "config");
        return Ok(cfg.map.plane.standoff_height);
    }
    let cal = calibrate_standoff(&cfg.geometry, &cfg.map.frame, &cfg.map.target)?;
    report.number("standoff_um", cal.standoff_height * 1e6);
    report.text(
        "standoff_source",
        if cal.exact {
            "calibrated"
        } else {
            "calibrated (closest, target ratio not reached)"
        },
    );
    report.number("calibration_target_ratio", cfg.map.target.ratio);
    report.number("calibration_achieved_ratio", cal.achieved_ratio);
    Ok(cal.standoff_height)
}

/// Center Rabi frequency per ampere of loop current.
fn center_f1_per_amp(cfg: &RunConfig, solver: &FieldSolver, standoff: f64) -> Result<f64> {
    let b = b1_perp_at(solver, &cfg.map.frame, 0.0, 0.0, standoff, 1.0, cfg.map.options.spot_diameter)?;
    Ok(0.5 * cfg.map.options.gyromagnetic_ratio * b)
}

/// Loop current for field maps: explicit, or what the chain delivers.
fn drive_current(cfg: &RunConfig, report: &mut ScenarioReport) -> Result<f64> {
    if let Some(i) = cfg.map.current {
        report.text("current_source", "config");
        return Ok(i);
    }
    let omega = cfg.omega();
    let current = match cfg.chain.termination {
        TerminationMode::OpenPhaseShifter => {
            let tuned = optimal_phase_with_grid(omega, &cfg.chain, cfg.tune.grid_points)?;
            report.text("current_source", "tuned phase shifter");
            report.number("phi_opt_deg", tuned.phi_opt.to_degrees());
            tuned.loop_current_amplitude
        }
        TerminationMode::Fixed50Ohm => {
            report.text("current_source", "fixed 50 ohm termination");
            fixed_termination_current(omega, &cfg.chain)?
        }
    };
    Ok(current)
}

pub fn run_tune(cfg: &RunConfig) -> Result<ScenarioReport> {
    let mut report = start(cfg, Scenario::Tune)?;
    let chain = tunable(&cfg.chain);
    let omega = cfg.omega();

    let tuned = optimal_phase_with_grid(omega, &chain, cfg.tune.grid_points)?;
    let fixed = fixed_termination_current(omega, &chain)?;
    let solver = FieldSolver::new(&cfg.geometry)?;
    let standoff = resolve_standoff(cfg, &mut report)?;
    let k = center_f1_per_amp(cfg, &solver, standoff)?;

    report.number("drive_frequency_Hz", cfg.drive_frequency);
    report.number("available_power_W", chain.available_power);
    report.number("phi_opt_deg", tuned.phi_opt.to_degrees());
    report.number(
        "phi_opt_plus_line2_deg",
        (tuned.phi_opt + chain.line2_phase).rem_euclid(PI).to_degrees(),
    );
    report.number("zin_abs_at_opt_ohm", tuned.zin_at_opt.norm());
    report.number("zin_re_at_opt_ohm", tuned.zin_at_opt.re);
    report.number("zin_im_at_opt_ohm", tuned.zin_at_opt.im);
    report.number("reflection_magnitude", tuned.reflection_coefficient_magnitude);
    report.number("tuned_current_A", tuned.loop_current_amplitude);
    report.number("fixed_50_ohm_current_A", fixed);
    report.number("center_f1_per_A_Hz", k);
    let f1_tuned = k * tuned.loop_current_amplitude;
    report.number("tuned_center_f1_Hz", f1_tuned);
    report.number("fixed_50_ohm_center_f1_Hz", k * fixed);
    report.number(
        "tuned_efficiency_Hz_per_sqrtW",
        driving_efficiency(f1_tuned, chain.available_power)?,
    );

    let sweep = phi_sweep(omega, &chain, cfg.tune.sweep_points)?;
    let path = cfg.output_dir.join("f1_vs_phi.csv");
    write_csv(
        &path,
        &["phi_deg", "zin_re", "zin_im", "current_A", "f1_Hz"],
        sweep.iter().map(|s| {
            let (re, im) = match s.zin {
                Some(z) => (num(z.re), num(z.im)),
                None => ("inf".to_string(), "inf".to_string()),
            };
            vec![num(s.phi.to_degrees()), re, im, num(s.loop_current), num(k * s.loop_current)]
        }),
    )?;
    report.files.push(path);

    if !cfg.tune.frequency_table.is_empty() {
        let mut rows = Vec::with_capacity(cfg.tune.frequency_table.len());
        for &(f, p) in &cfg.tune.frequency_table {
            let c = DriveChain {
                available_power: p,
                ..chain.clone()
            };
            let w = 2.0 * PI * f;
            let t = optimal_phase_with_grid(w, &c, cfg.tune.grid_points)?;
            let i_fixed = fixed_termination_current(w, &c)?;
            rows.push(vec![
                num(f),
                num(p),
                num(t.phi_opt.to_degrees()),
                num(t.loop_current_amplitude),
                num(k * t.loop_current_amplitude),
                num(i_fixed),
                num(k * i_fixed),
                num(driving_efficiency(k * t.loop_current_amplitude, p)?),
            ]);
        }
        let path = cfg.output_dir.join("f1_vs_frequency.csv");
        write_csv(
            &path,
            &[
                "frequency_Hz",
                "power_W",
                "phi_opt_deg",
                "tuned_current_A",
                "tuned_f1_Hz",
                "fixed_current_A",
                "fixed_f1_Hz",
                "tuned_efficiency_Hz_per_sqrtW",
            ],
            rows,
        )?;
        report.files.push(path);
    }
    finish(cfg, report)
}

pub fn run_map(cfg: &RunConfig) -> Result<ScenarioReport> {
    let mut report = start(cfg, Scenario::Map)?;
    let standoff = resolve_standoff(cfg, &mut report)?;
    let current = drive_current(cfg, &mut report)?;
    report.number("loop_current_A", current);

    let plane = crate::magnetics::EvalPlane {
        standoff_height: standoff,
        ..cfg.map.plane
    };
    let map = f1_map(&cfg.geometry, &plane, &cfg.map.frame, current, &cfg.map.options)?;
    let center = map
        .center()
        .ok_or_else(|| Error::EmptySelection("every map pixel is flagged".into()))?;
    report.number("center_f1_Hz", center.f1);
    let solver = FieldSolver::new(&cfg.geometry)?;
    report.number(
        "offset_ratio",
        offset_ratio(&solver, &cfg.map.frame, standoff, &cfg.map.target)?,
    );
    report.number(
        "flagged_pixels",
        map.pixels.iter().filter(|p| p.flagged).count() as f64,
    );
    for &side in &cfg.map.squares {
        let h = homogeneity(&map, side)?;
        let tag = format!("square_{:.0}um", side * 1e6);
        report.number(format!("{tag}_mean_f1_Hz"), h.mean);
        report.number(format!("{tag}_normalized_std"), h.normalized_std);
        report.number(format!("{tag}_pixels"), h.pixel_count as f64);
    }

    let path = cfg.output_dir.join("f1_map.csv");
    write_csv(
        &path,
        &["x_um", "y_um", "f1_Hz", "flagged"],
        map.pixels.iter().map(|p| {
            vec![
                num(p.x * 1e6),
                num(p.y * 1e6),
                num(p.f1),
                u8::from(p.flagged).to_string(),
            ]
        }),
    )?;
    report.files.push(path);
    finish(cfg, report)
}

pub fn run_esr(cfg: &RunConfig) -> Result<ScenarioReport> {
    let mut report = start(cfg, Scenario::Esr)?;
    let mut rows = Vec::with_capacity(cfg.esr_fields.len());
    for (i, &b0) in cfg.esr_fields.iter().enumerate() {
        let lines = esr_frequencies(b0, &cfg.nv)?;
        report.number(format!("b0_G.{i}"), b0 / GAUSS);
        report.number(format!("f_minus_Hz.{i}"), lines.f_minus);
        report.number(format!("f_plus_Hz.{i}"), lines.f_plus);
        rows.push(vec![num(b0 / GAUSS), num(b0), num(lines.f_minus), num(lines.f_plus)]);
    }
    let path = cfg.output_dir.join("esr.csv");
    write_csv(&path, &["b0_G", "b0_T", "f_minus_Hz", "f_plus_Hz"], rows)?;
    report.files.push(path);
    finish(cfg, report)
}

pub fn run_rabi(cfg: &RunConfig) -> Result<ScenarioReport> {
    let mut report = start(cfg, Scenario::Rabi)?;
    let r = &cfg.rabi;
    let n = (r.duration / r.step + 1e-9).floor() as usize + 1;
    let times: Vec<f64> = (0..n).map(|i| i as f64 * r.step).collect();
    let population: Vec<f64> = times.iter().map(|&t| rabi_population(t, r.f1, r.detuning)).collect();
    let contrast: Vec<f64> = population.iter().map(|p| 1.0 - r.contrast_depth * p).collect();

    let generalized = r.f1.hypot(r.detuning);
    report.number("f1_Hz", r.f1);
    report.number("detuning_Hz", r.detuning);
    report.number("pi_time_s", 0.5 / generalized);
    // First extremum: search one oscillation period only.
    let first_period = times.iter().take_while(|&&t| t <= 1.0 / generalized).count().max(1);
    let (i_min, c_min) = contrast[..first_period]
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &c)| if c < acc.1 { (i, c) } else { acc });
    report.number("min_contrast", c_min);
    report.number("min_contrast_time_s", times[i_min]);

    let mut ensemble = None;
    if let Some((x, y)) = r.ensemble_spot {
        let standoff = resolve_standoff(cfg, &mut report)?;
        let current = drive_current(cfg, &mut report)?;
        let solver = FieldSolver::new(&cfg.geometry)?;
        let f1s = spot_f1_samples(
            &solver,
            &cfg.map.frame,
            (x, y),
            standoff,
            current,
            r.spot_diameter,
            cfg.nv.gyromagnetic_ratio,
        )?;
        let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
        let spread = (f1s.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / f1s.len() as f64).sqrt();
        report.number("loop_current_A", current);
        report.number("ensemble_mean_f1_Hz", mean);
        report.number("ensemble_std_f1_Hz", spread);

        let series = ensemble_rabi(&f1s, &times)?;
        let spec = spectrum_with(
            &series,
            &SpectrumOptions {
                window: Window::Rectangular,
                zero_pad: r.zero_pad,
            },
        );
        let nyquist = 0.5 / r.step;
        let p = peak(&spec, (spec.resolution, nyquist))?;
        report.number("ensemble_f_peak_Hz", p.f_peak);
        report.number("ensemble_fwhm_Hz", p.fwhm);
        report.number("fourier_limit_Hz", spec.resolution);

        let path = cfg.output_dir.join("rabi_spectrum.csv");
        write_csv(
            &path,
            &["frequency_Hz", "magnitude"],
            spec.freqs.iter().zip(&spec.magnitudes).map(|(f, m)| vec![num(*f), num(*m)]),
        )?;
        ensemble = Some((series, path));
    }

    let path = cfg.output_dir.join("rabi.csv");
    let mut header = vec!["t_s", "population", "contrast"];
    if ensemble.is_some() {
        header.push("ensemble_population");
    }
    let series: Option<&TimeSeries> = ensemble.as_ref().map(|(s, _)| s);
    write_csv(
        &path,
        &header,
        (0..n).map(|i| {
            let mut row = vec![num(times[i]), num(population[i]), num(contrast[i])];
            if let Some(s) = series {
                row.push(num(s.samples[i]));
            }
            row
        }),
    )?;
    report.files.push(path);
    if let Some((_, spectrum_path)) = ensemble {
        report.files.push(spectrum_path);
    }
    finish(cfg, report)
}

pub fn run_odmr(cfg: &RunConfig) -> Result<ScenarioReport> {
    let mut report = start(cfg, Scenario::Odmr)?;
    let o = &cfg.odmr;
    let f0 = match o.f0 {
        Some(f) => f,
        None => esr_frequencies(cfg.esr_fields[0], &cfg.nv)?.f_minus,
    };
    let step = o.span / (o.points - 1) as f64;
    let freqs: Vec<f64> = (0..o.points).map(|i| f0 - 0.5 * o.span + i as f64 * step).collect();
    let contrast = odmr_spectrum(&freqs, f0, o.f1, o.pulse_duration, o.contrast_depth)?;
    let (i_min, c_min) = contrast
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &c)| if c < acc.1 { (i, c) } else { acc });
    report.number("f0_Hz", f0);
    report.number("dip_frequency_Hz", freqs[i_min]);
    report.number("dip_contrast", c_min);

    let path = cfg.output_dir.join("odmr.csv");
    write_csv(
        &path,
        &["frequency_Hz", "contrast"],
        freqs.iter().zip(&contrast).map(|(f, c)| vec![num(*f), num(*c)]),
    )?;
    report.files.push(path);
    finish(cfg, report)
}

pub fn run_inductance(cfg: &RunConfig) -> Result<ScenarioReport> {
    let mut report = start(cfg, Scenario::Inductance)?;
    let b = inductance_breakdown(&cfg.geometry)?;
    report.number("loop_inductance_nH", b.total * 1e9);
    report.number("self_sum_nH", b.self_terms.iter().sum::<f64>() * 1e9);
    report.number(
        "mutual_sum_nH",
        b.mutual_terms.iter().map(|m| 2.0 * m.2).sum::<f64>() * 1e9,
    );

    let mut rows: Vec<Vec<String>> = b
        .self_terms
        .iter()
        .enumerate()
        .map(|(i, l)| vec!["self".into(), i.to_string(), i.to_string(), num(*l)])
        .collect();
    rows.extend(
        b.mutual_terms
            .iter()
            .map(|&(i, j, m)| vec!["mutual".into(), i.to_string(), j.to_string(), num(m)]),
    );
    rows.push(vec!["total".into(), String::new(), String::new(), num(b.total)]);
    let path = cfg.output_dir.join("inductance.csv");
    write_csv(&path, &["term", "turn_i", "turn_j", "inductance_H"], rows)?;
    report.files.push(path);
    finish(cfg, report)
}

pub fn run_casr(cfg: &RunConfig) -> Result<ScenarioReport> {
    let mut report = start(cfg, Scenario::Casr)?;
    let run = casr_run(&cfg.casr.run)?;
    let spec = spectrum_with(&run.pl, &cfg.casr.spectrum);
    let nyquist = 0.5 / run.block_period;

    report.number("block_period_s", run.block_period);
    report.number("blocks", run.pl.len() as f64);
    report.number("sequence_duration_s", run.sequence.duration());
    report.number("expected_frequency_Hz", run.expected_frequency);
    report.number("fourier_limit_Hz", spec.resolution);
    report.number("bin_width_Hz", spec.bin_width);

    let band = cfg.casr.band.unwrap_or((spec.resolution, nyquist));
    // A constant record leaves only mean-removal roundoff in the spectrum.
    let level = run.pl.samples.iter().map(|s| s.abs()).sum::<f64>() / run.pl.len() as f64;
    let flat = spec.magnitudes.iter().all(|&m| m <= 1e-12 * level.max(f64::MIN_POSITIVE));
    match peak(&spec, band) {
        Ok(p) if !flat => {
            report.number("f_peak_Hz", p.f_peak);
            report.number("peak_amplitude", p.amplitude);
            report.number("fwhm_Hz", p.fwhm);
        }
        Ok(_) | Err(Error::NoPeak(_)) => report.text("f_peak_Hz", "none (flat spectrum)"),
        Err(e) => return Err(e),
    }

    let path = cfg.output_dir.join("casr_pl.csv");
    write_csv(
        &path,
        &["t_s", "pl_contrast"],
        run.pl
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| vec![num(run.pl.time(i)), num(*s)]),
    )?;
    report.files.push(path);
    let path = cfg.output_dir.join("casr_spectrum.csv");
    write_csv(
        &path,
        &["frequency_Hz", "magnitude"],
        spec.freqs.iter().zip(&spec.magnitudes).map(|(f, m)| vec![num(*f), num(*m)]),
    )?;
    report.files.push(path);
    finish(cfg, report)
}
