use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn nvloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvloop")).args(args).output().expect("binary runs")
}

fn run_with(dir: &Path, scenario: &str, config: &str, out: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{out}.toml"));
    fs::write(&cfg, config).unwrap();
    let out_dir = dir.join(out);
    let mut args = vec![
        scenario,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    nvloop(&args)
}

fn report_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("report.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("{key} missing from report:\n{text}"))
        .to_string()
}

fn report_number(dir: &Path, key: &str) -> f64 {
    report_value(dir, key).parse().unwrap()
}

#[test]
fn identical_runs_write_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let casr = "casr.total_time_s = 0.02\ncasr.noise_std = 1e-4\n";
    for (scenario, config) in [("tune", ""), ("casr", casr), ("map", "map.extent_um = 60\nmap.squares_um = [40]\n")] {
        let a = run_with(tmp.path(), scenario, config, &format!("{scenario}_a"), &["--seed", "5"]);
        let b = run_with(tmp.path(), scenario, config, &format!("{scenario}_b"), &["--seed", "5"]);
        assert!(a.status.success() && b.status.success());
        let mut names: Vec<_> = fs::read_dir(tmp.path().join(format!("{scenario}_a")))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() >= 2);
        for name in names {
            let x = fs::read(tmp.path().join(format!("{scenario}_a")).join(&name)).unwrap();
            let y = fs::read(tmp.path().join(format!("{scenario}_b")).join(&name)).unwrap();
            assert!(x == y, "{scenario}: {name:?} differs");
        }
    }
}

#[test]
fn seed_changes_noisy_output() {
    let tmp = TempDir::new().unwrap();
    let casr = "casr.total_time_s = 0.02\ncasr.noise_std = 1e-4\n";
    assert!(run_with(tmp.path(), "casr", casr, "s1", &["--seed", "1"]).status.success());
    assert!(run_with(tmp.path(), "casr", casr, "s2", &["--seed", "2"]).status.success());
    let a = fs::read(tmp.path().join("s1/casr_pl.csv")).unwrap();
    let b = fs::read(tmp.path().join("s2/casr_pl.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("tune", "chain.loop_inductance_nH = -1\n", "loop_inductance"),
        ("tune", "chain.loop_inductanse_nH = 5\n", "unknown key"),
        ("esr", "esr.b0_MHz = 5\n", "magnetic field"),
        ("casr", "casr.f1_MHz = 20\n", "pulses overlap"),
        ("map", "map.pitch_um = 0\n", "pixel_pitch"),
        ("tune", "this is not toml", "config error"),
    ];
    for (i, (scenario, config, needle)) in cases.iter().enumerate() {
        let out = run_with(tmp.path(), scenario, config, &format!("bad{i}"), &[]);
        assert_eq!(out.status.code(), Some(2), "{config}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(needle), "{config}: {stderr}");
        assert!(!tmp.path().join(format!("bad{i}")).exists(), "nothing is written on config errors");
    }
    let out = run_with(tmp.path(), "calibrate", "", "badsc", &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_errors_exit_with_3() {
    let tmp = TempDir::new().unwrap();
    // Enough loss that the phase shifter no longer changes the input impedance.
    let out = run_with(tmp.path(), "tune", "chain.line_loss_dB = 400\n", "flat", &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gauss_values_round_trip_through_the_report() {
    let tmp = TempDir::new().unwrap();
    let fields = [116.0, 526.123456789012, 1125.0];
    let config = format!(
        "esr.b0_G = [{}]\n",
        fields.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(", ")
    );
    let out = run_with(tmp.path(), "esr", &config, "esr", &[]);
    assert!(out.status.success());
    let dir = tmp.path().join("esr");
    let echoed = report_value(&dir, "esr.b0_G");
    let echoed: Vec<f64> = echoed
        .trim_matches(|c| c == '[' || c == ']')
        .split(", ")
        .map(|v| v.parse().unwrap())
        .collect();
    for (e, f) in echoed.iter().zip(&fields) {
        assert!(((e - f) / f).abs() < 1e-12, "{e} vs {f}");
    }
    let csv = fs::read_to_string(dir.join("esr.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((row[2] - 1.40e9).abs() < 10e6 && (row[3] - 4.34e9).abs() < 10e6, "{row:?}");
    assert!(!csv.contains('\r'));
}

#[test]
fn tune_reports_cancellation_and_ordering() {
    let tmp = TempDir::new().unwrap();
    assert!(run_with(tmp.path(), "tune", "", "tune", &[]).status.success());
    let dir = tmp.path().join("tune");
    assert!(report_number(&dir, "zin_abs_at_opt_ohm") < 1e-6);
    assert!(report_number(&dir, "tuned_center_f1_Hz") > report_number(&dir, "fixed_50_ohm_center_f1_Hz"));
    let csv = fs::read_to_string(dir.join("f1_vs_phi.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "phi_deg,zin_re,zin_im,current_A,f1_Hz");
    assert_eq!(csv.lines().count(), 721);
}

#[test]
fn tune_frequency_table() {
    let tmp = TempDir::new().unwrap();
    let config = "tune.table_frequency_GHz = [1.4, 2.55, 4.34]\ntune.table_power_W = [20, 34.8, 30]\n";
    assert!(run_with(tmp.path(), "tune", config, "table", &[]).status.success());
    let csv = fs::read_to_string(tmp.path().join("table/f1_vs_frequency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[4] > v[6], "tuned beats fixed: {line}");
    }
}

#[test]
fn map_calibration_is_reported() {
    let tmp = TempDir::new().unwrap();
    assert!(run_with(tmp.path(), "map", "map.calibrate = true\n", "cal", &[]).status.success());
    let dir = tmp.path().join("cal");
    assert_eq!(report_value(&dir, "standoff_source"), "calibrated");
    let ratio = report_number(&dir, "calibration_achieved_ratio");
    assert!((ratio - 151.2 / 136.3).abs() < 1e-6);
    let s40 = report_number(&dir, "square_40um_normalized_std");
    let s100 = report_number(&dir, "square_100um_normalized_std");
    assert!(s40 < s100);
    let csv = fs::read_to_string(dir.join("f1_map.csv")).unwrap();
    assert_eq!(csv.lines().count(), 29 * 29 + 1);

    assert!(run_with(tmp.path(), "map", "", "plain", &[]).status.success());
    assert_eq!(report_value(&tmp.path().join("plain"), "standoff_source"), "config");
}

#[test]
fn casr_scenario_reports_peak_and_flat_case() {
    let tmp = TempDir::new().unwrap();
    assert!(run_with(tmp.path(), "casr", "casr.total_time_s = 0.1\n", "c", &[]).status.success());
    let dir = tmp.path().join("c");
    assert!((report_number(&dir, "f_peak_Hz") - 8e3).abs() <= report_number(&dir, "bin_width_Hz"));
    let listed = fs::read_to_string(dir.join("report.txt")).unwrap();
    for f in ["casr_pl.csv", "casr_spectrum.csv", "report.txt"] {
        assert!(listed.contains(&format!("\n{f}\n")) || listed.ends_with(&format!("{f}\n")));
    }

    let config = "casr.total_time_s = 0.01\ncasr.amplitude_nT = 0\n";
    assert!(run_with(tmp.path(), "casr", config, "z", &[]).status.success());
    assert!(report_value(&tmp.path().join("z"), "f_peak_Hz").starts_with("none"));
}

#[test]
fn rabi_odmr_inductance_scenarios() {
    let tmp = TempDir::new().unwrap();
    assert!(run_with(tmp.path(), "rabi", "", "rabi", &[]).status.success());
    let dir = tmp.path().join("rabi");
    let t_min = report_number(&dir, "min_contrast_time_s");
    assert!((t_min - report_number(&dir, "pi_time_s")).abs() <= 0.1e-9);
    assert!((report_number(&dir, "min_contrast") - 0.97).abs() < 1e-4);

    let config = "rabi.ensemble = true\nrabi.spot_x_um = -50\nrabi.duration_us = 2\nrabi.step_ns = 0.25\nmap.calibrate = true\n";
    assert!(run_with(tmp.path(), "rabi", config, "ens", &[]).status.success());
    let dir = tmp.path().join("ens");
    assert!(report_number(&dir, "ensemble_std_f1_Hz") > 0.0);
    assert!(dir.join("rabi_spectrum.csv").exists());

    assert!(run_with(tmp.path(), "odmr", "esr.b0_G = 526\n", "odmr", &[]).status.success());
    let dir = tmp.path().join("odmr");
    assert!((report_number(&dir, "dip_frequency_Hz") - 1.3959376e9).abs() < 1e3);

    assert!(run_with(tmp.path(), "inductance", "", "ind", &[]).status.success());
    let l = report_number(&tmp.path().join("ind"), "loop_inductance_nH");
    assert!((l - 5.7).abs() <= 0.25 * 5.7, "{l}");
}
