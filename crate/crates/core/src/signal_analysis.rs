//! One-sided magnitude spectra of uniformly sampled real signals, with
//! parabolic peak location and half-maximum width.

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub samples: Vec<f64>,
    /// Seconds between samples.
    pub sample_period: f64,
    /// Time of the first sample (s).
    pub t0: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_period: f64, t0: f64) -> Result<Self> {
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::invalid("sample_period", "must be finite and > 0"));
        }
        if samples.len() < 2 {
            return Err(Error::invalid("samples", "need at least 2 samples"));
        }
        Ok(Self {
            samples,
            sample_period,
            t0,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Record length n * dt (s).
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.sample_period
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.sample_period
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    fn weights(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            // Periodic Hann.
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    pub window: Window,
    /// Transform length is `zero_pad * n` samples. Cosmetic: it interpolates
    /// the spectrum but does not change the true resolution 1/(n dt).
    pub zero_pad: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            window: Window::Rectangular,
            zero_pad: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// 0 .. Nyquist inclusive, ascending.
    pub freqs: Vec<f64>,
    /// One-sided amplitude spectrum: a sinusoid of amplitude A centered on
    /// a bin reads A (rectangular window).
    pub magnitudes: Vec<f64>,
    /// Spacing of `freqs`: 1 / (n_fft dt).
    pub bin_width: f64,
    /// Fourier resolution of the record: 1 / (n dt).
    pub resolution: f64,
    pub n_samples: usize,
    pub n_fft: usize,
    window_sum: f64,
}

impl Spectrum {
    /// Sum over k of |X_k|^2 / n_fft, reconstructed from the one-sided
    /// magnitudes. Equals the energy of the windowed, mean-removed record.
    pub fn parseval_energy(&self) -> f64 {
        let last = self.magnitudes.len() - 1;
        let even = self.n_fft.is_multiple_of(2);
        let full: f64 = self
            .magnitudes
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                let unscaled = if k == 0 || (even && k == last) {
                    m * self.window_sum
                } else {
                    m * self.window_sum / 2.0
                };
                let mult = if k == 0 || (even && k == last) { 1.0 } else { 2.0 };
                mult * unscaled * unscaled
            })
            .sum();
        full / self.n_fft as f64
    }
}

/// Mean-removed one-sided spectrum with the default 4x zero padding.
pub fn spectrum(ts: &TimeSeries, window: Window) -> Spectrum {
    spectrum_with(
        ts,
        &SpectrumOptions {
            window,
            ..SpectrumOptions::default()
        },
    )
}

pub fn spectrum_with(ts: &TimeSeries, options: &SpectrumOptions) -> Spectrum {
    let n = ts.samples.len();
    let n_fft = n * options.zero_pad.max(1);
    let mean = ts.samples.iter().sum::<f64>() / n as f64;
    let w = options.window.weights(n);
    let window_sum: f64 = w.iter().sum();

    let mut buf: Vec<Complex64> = ts
        .samples
        .iter()
        .zip(&w)
        .map(|(x, wi)| Complex64::new((x - mean) * wi, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(n_fft)
        .collect();
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);

    let n_half = n_fft / 2;
    let bin_width = 1.0 / (n_fft as f64 * ts.sample_period);
    let even = n_fft.is_multiple_of(2);
    let magnitudes = (0..=n_half)
        .map(|k| {
            let scale = if k == 0 || (even && k == n_half) { 1.0 } else { 2.0 };
            scale * buf[k].norm() / window_sum
        })
        .collect();
    Spectrum {
        freqs: (0..=n_half).map(|k| k as f64 * bin_width).collect(),
        magnitudes,
        bin_width,
        resolution: 1.0 / (n as f64 * ts.sample_period),
        n_samples: n,
        n_fft,
        window_sum,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub f_peak: f64,
    pub amplitude: f64,
    /// Full width at half maximum (Hz).
    pub fwhm: f64,
    pub bin: usize,
}

/// Largest bin inside `band` (Hz, inclusive), refined by a 3-point parabola;
/// FWHM by linear interpolation of the half-maximum crossings.
pub fn peak(spec: &Spectrum, band: (f64, f64)) -> Result<Peak> {
    let (lo, hi) = band;
    if !(hi >= lo) {
        return Err(Error::invalid("search_band", "upper edge below lower edge"));
    }
    let fmax = *spec.freqs.last().unwrap();
    if lo > fmax || hi < 0.0 {
        return Err(Error::invalid("search_band", "band lies outside the spectrum"));
    }
    let mags = &spec.magnitudes;
    let best = spec
        .freqs
        .iter()
        .enumerate()
        .filter(|(_, f)| **f >= lo && **f <= hi)
        .max_by(|a, b| mags[a.0].total_cmp(&mags[b.0]))
        .map(|(k, _)| k)
        .ok_or_else(|| Error::EmptySelection("no spectral bins inside the search band".into()))?;

    let y0 = mags[best];
    if !(y0 > 0.0) || best == 0 || best + 1 >= mags.len() {
        return Err(Error::NoPeak("band maximum is not an interior local maximum".into()));
    }
    let (ym, yp) = (mags[best - 1], mags[best + 1]);
    if ym > y0 || yp > y0 {
        return Err(Error::NoPeak("band maximum is not a local maximum".into()));
    }
    let curvature = ym - 2.0 * y0 + yp;
    let offset = if curvature != 0.0 { 0.5 * (ym - yp) / curvature } else { 0.0 };
    let f_peak = spec.freqs[best] + offset * spec.bin_width;
    let amplitude = y0 - 0.25 * (ym - yp) * offset;

    let half = amplitude / 2.0;
    let crossing = |range: &mut dyn Iterator<Item = usize>, step: isize| -> Result<f64> {
        for k in range {
            if mags[k] < half {
                let inner = (k as isize - step) as usize;
                let (fa, fb) = (spec.freqs[k], spec.freqs[inner]);
                let (ya, yb) = (mags[k], mags[inner]);
                return Ok(fa + (half - ya) / (yb - ya) * (fb - fa));
            }
        }
        Err(Error::NoPeak("half maximum is never reached".into()))
    };
    let left = crossing(&mut (0..best).rev(), -1)?;
    let right = crossing(&mut (best + 1..mags.len()), 1)?;
    Ok(Peak {
        f_peak,
        amplitude,
        fwhm: right - left,
        bin: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sine(n: usize, dt: f64, f: f64, amp: f64) -> TimeSeries {
        TimeSeries::new((0..n).map(|i| amp * (2.0 * PI * f * i as f64 * dt).sin()).collect(), dt, 0.0).unwrap()
    }

    const RAW: SpectrumOptions = SpectrumOptions {
        window: Window::Rectangular,
        zero_pad: 1,
    };

    #[test]
    fn exact_bin_sine_is_a_single_line() {
        let (n, dt) = (1000, 1e-3);
        let s = spectrum_with(&sine(n, dt, 50.0, 2.0), &RAW);
        assert_relative_eq!(s.bin_width, 1.0);
        let k = 50;
        assert_relative_eq!(s.magnitudes[k], 2.0, max_relative = 1e-12);
        for (i, m) in s.magnitudes.iter().enumerate() {
            if i != k {
                assert!(*m < 1e-10 * s.magnitudes[k], "bin {i}: {m}");
            }
        }
    }

    #[test]
    fn constant_series_has_empty_spectrum() {
        let ts = TimeSeries::new(vec![3.25; 64], 0.1, 0.0).unwrap();
        let s = spectrum(&ts, Window::Rectangular);
        assert!(s.magnitudes.iter().all(|m| *m < 1e-15));
        assert!(matches!(peak(&s, (0.0, 5.0)), Err(Error::NoPeak(_))));
    }

    #[test]
    fn frequency_axis_runs_to_nyquist() {
        let ts = sine(100, 0.01, 7.0, 1.0);
        let s = spectrum(&ts, Window::Hann);
        assert_eq!(s.freqs[0], 0.0);
        assert_relative_eq!(*s.freqs.last().unwrap(), 50.0, max_relative = 1e-12);
        assert!(s.freqs.windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(s.bin_width, 1.0 / (400.0 * 0.01));
        assert_relative_eq!(s.resolution, 1.0);
    }

    #[test]
    fn parseval_rectangular() {
        let samples: Vec<f64> = (0..777).map(|i| ((i * 37 % 101) as f64).sin() + 0.3).collect();
        let ts = TimeSeries::new(samples.clone(), 1e-3, 0.0).unwrap();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let energy: f64 = samples.iter().map(|x| (x - mean).powi(2)).sum();
        for pad in [1, 2, 4] {
            let s = spectrum_with(
                &ts,
                &SpectrumOptions {
                    window: Window::Rectangular,
                    zero_pad: pad,
                },
            );
            assert_relative_eq!(s.parseval_energy(), energy, max_relative = 1e-9);
        }
    }

    #[test]
    fn off_bin_peak_is_accurate() {
        let dt = 1e-3;
        let f_true = 123.37;
        let s = spectrum(&sine(2000, dt, f_true, 1.0), Window::Rectangular);
        let p = peak(&s, (100.0, 150.0)).unwrap();
        assert!((p.f_peak - f_true).abs() < 0.1 * s.bin_width, "{} vs {}", p.f_peak, f_true);
    }

    #[test]
    fn fourier_limited_width() {
        let dt = 1.0 / 4096.0;
        for t in [1.0, 10.0] {
            let n = (t / dt) as usize;
            let s = spectrum(&sine(n, dt, 300.3, 1.0), Window::Rectangular);
            let p = peak(&s, (250.0, 350.0)).unwrap();
            let ratio = p.fwhm * t;
            assert!((1.0 / 1.25..=1.25).contains(&ratio), "T={t}: fwhm*T = {ratio}");
        }
    }

    #[test]
    fn doubling_amplitude_doubles_peak_only() {
        let dt = 1e-3;
        let a = peak(&spectrum(&sine(3000, dt, 77.7, 1.0), Window::Rectangular), (50.0, 100.0)).unwrap();
        let b = peak(&spectrum(&sine(3000, dt, 77.7, 2.0), Window::Rectangular), (50.0, 100.0)).unwrap();
        assert_relative_eq!(b.amplitude, 2.0 * a.amplitude, max_relative = 1e-12);
        assert_relative_eq!(b.fwhm, a.fwhm, max_relative = 1e-12);
    }

    #[test]
    fn peak_errors() {
        let s = spectrum(&sine(256, 1e-3, 100.0, 1.0), Window::Rectangular);
        assert!(matches!(peak(&s, (1000.0, 2000.0)), Err(Error::InvalidParameter { .. })));
        assert!(matches!(peak(&s, (20.0, 10.0)), Err(Error::InvalidParameter { .. })));
        // Maximum at the band edge of a rising slope.
        let ramp = Spectrum {
            freqs: (0..5).map(f64::from).collect(),
            magnitudes: (0..5).map(f64::from).collect(),
            bin_width: 1.0,
            resolution: 1.0,
            n_samples: 8,
            n_fft: 8,
            window_sum: 8.0,
        };
        assert!(matches!(peak(&ramp, (0.0, 2.5)), Err(Error::NoPeak(_))));
    }

    #[test]
    fn timeseries_validation() {
        assert!(TimeSeries::new(vec![1.0], 1.0, 0.0).is_err());
        assert!(TimeSeries::new(vec![1.0, 2.0], 0.0, 0.0).is_err());
    }
}
