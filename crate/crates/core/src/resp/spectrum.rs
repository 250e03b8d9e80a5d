//! Windowed magnitude spectra, the spectral concentration score and the
//! per-subcarrier stability score.

use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::RangeInclusive;
use std::sync::Arc;

use super::filter::BandConfig;
use crate::error::{Error, Result};

/// Zero-padding factor applied before rounding the FFT length up to a power
/// of two.
pub const PAD_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Amplitude,
    Phase,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Amplitude => "amplitude",
            Modality::Phase => "phase",
        })
    }
}

/// Dominant in-band frequency and how much of the in-band magnitude it holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub modality: Modality,
    pub f_star_hz: f64,
    pub q_spec: f64,
    /// Frequency spacing of the spectrum `f_star_hz` was read from.
    pub bin_hz: f64,
}

/// Single-sided magnitude spectrum, bins `0..=n/2`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    pub bin_hz: f64,
}

impl Spectrum {
    /// Bins whose centre frequency lies inside the band (edges included).
    pub fn band_bins(&self, band: &BandConfig) -> Option<RangeInclusive<usize>> {
        let eps = 1e-9 * self.bin_hz;
        let first = ((band.low_hz - eps) / self.bin_hz).ceil().max(0.0) as usize;
        let last = ((band.high_hz + eps) / self.bin_hz).floor() as usize;
        let last = last.min(self.magnitudes.len().saturating_sub(1));
        (first <= last).then_some(first..=last)
    }
}

/// Symmetric Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

fn forward_fft(len: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(len)
}

/// Hann-windowed magnitude spectrum zero-padded to the next power of two of
/// `PAD_FACTOR * len`.
pub fn padded_spectrum(series: &[f64], sample_rate_hz: f64) -> Spectrum {
    let n_fft = (PAD_FACTOR * series.len()).next_power_of_two();
    let window = hann(series.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for ((b, x), w) in buf.iter_mut().zip(series).zip(&window) {
        b.re = x * w;
    }
    forward_fft(n_fft).process(&mut buf);
    Spectrum {
        magnitudes: buf[..=n_fft / 2].iter().map(|z| z.norm()).collect(),
        bin_hz: sample_rate_hz / n_fft as f64,
    }
}

/// Concentration of the in-band spectrum at its dominant bin:
/// `q = |X(f*)| / sum_{f in band} |X(f)|`.
pub fn spectral_concentration(
    series: &[f64],
    band: &BandConfig,
    modality: Modality,
) -> Result<SpectralReport> {
    band.validate()?;
    let required = band.min_samples();
    if series.len() < required {
        return Err(Error::InsufficientData {
            what: "spectral concentration samples",
            required,
            actual: series.len(),
        });
    }
    let spectrum = padded_spectrum(series, band.sample_rate_hz);
    let bins = spectrum.band_bins(band).ok_or(Error::BandResolution {
        low_hz: band.low_hz,
        high_hz: band.high_hz,
    })?;
    let in_band = &spectrum.magnitudes[bins.clone()];
    let (offset, peak) = in_band
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let total: f64 = in_band.iter().sum();
    let q_spec = if total > 0.0 { peak / total } else { 0.0 };
    Ok(SpectralReport {
        modality,
        f_star_hz: (bins.start() + offset) as f64 * spectrum.bin_hz,
        q_spec,
        bin_hz: spectrum.bin_hz,
    })
}

/// Scores many equal-length series by the fraction of their (mean-removed,
/// Hann-windowed) power that falls inside the band.
pub struct StabilityScorer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    bins: Option<RangeInclusive<usize>>,
}

impl StabilityScorer {
    pub fn new(len: usize, band: &BandConfig) -> Self {
        let n_fft = len.max(1).next_power_of_two();
        let fft = forward_fft(n_fft);
        let scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let probe = Spectrum {
            magnitudes: vec![0.0; n_fft / 2 + 1],
            bin_hz: band.sample_rate_hz / n_fft as f64,
        };
        Self {
            fft,
            window: hann(len),
            buf: vec![Complex64::new(0.0, 0.0); n_fft],
            scratch,
            bins: probe.band_bins(band),
        }
    }

    /// In-band to total power ratio in `[0, 1]`; zero for a constant series.
    pub fn score<'a>(&mut self, series: impl ExactSizeIterator<Item = &'a f64> + Clone) -> f64 {
        let Some(bins) = self.bins.clone() else {
            return 0.0;
        };
        let n = series.len() as f64;
        let mean = series.clone().sum::<f64>() / n;
        self.buf.fill(Complex64::new(0.0, 0.0));
        for ((b, x), w) in self.buf.iter_mut().zip(series).zip(&self.window) {
            b.re = (x - mean) * w;
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let half = self.buf.len() / 2;
        let total: f64 = self.buf[..=half].iter().map(|z| z.norm_sqr()).sum();
        if total <= f64::MIN_POSITIVE {
            return 0.0;
        }
        let in_band: f64 = self.buf[bins].iter().map(|z| z.norm_sqr()).sum();
        in_band / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn tone(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * f * t as f64 / fs + 0.3).sin()).collect()
    }

    /// Direct O(N^2) DFT of the windowed, zero-padded series at bin `j`.
    fn dft_magnitude(series: &[f64], n_fft: usize, j: usize) -> f64 {
        let w = hann(series.len());
        let (mut re, mut im) = (0.0, 0.0);
        for (t, (x, wt)) in series.iter().zip(&w).enumerate() {
            let ang = -2.0 * PI * (j * t % n_fft) as f64 / n_fft as f64;
            re += x * wt * ang.cos();
            im += x * wt * ang.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn concentration_matches_direct_dft() {
        let fs = 10.0;
        let band = BandConfig::new(0.1, 0.5, fs).unwrap();
        let x = tone(0.27, fs, 200);
        let report = spectral_concentration(&x, &band, Modality::Amplitude).unwrap();
        let n_fft = 1024;
        assert!((report.bin_hz - fs / n_fft as f64).abs() < 1e-15);
        let lo = (0.1 * n_fft as f64 / fs).ceil() as usize;
        let hi = (0.5 * n_fft as f64 / fs).floor() as usize;
        let mags: Vec<f64> = (lo..=hi).map(|j| dft_magnitude(&x, n_fft, j)).collect();
        let (arg, peak) = mags
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let q = peak / mags.iter().sum::<f64>();
        assert!((report.q_spec - q).abs() < 1e-9);
        assert!((report.f_star_hz - (lo + arg) as f64 * fs / n_fft as f64).abs() < 1e-12);
    }

    #[test]
    fn pure_tone_concentration() {
        let band = BandConfig::default();
        let x = tone(0.3, 50.0, 6000);
        let report = spectral_concentration(&x, &band, Modality::Phase).unwrap();
        assert!((report.f_star_hz - 0.3).abs() <= report.bin_hz);
        // Zero padding spreads the Hann main lobe over ~22 bins here
        // (32768-point FFT of 6000 samples), so even a pure tone keeps
        // q near 1 / (padding ratio x integral of |Hann kernel|) ~ 0.088.
        let bins = padded_spectrum(&x, 50.0).band_bins(&band).unwrap().count() as f64;
        assert!(report.q_spec >= 0.08, "q = {}", report.q_spec);
        assert!(report.q_spec >= 20.0 / bins, "q = {} over {bins} bins", report.q_spec);
        assert!(report.q_spec <= 1.0);
    }

    #[test]
    fn tone_at_band_edge_is_found() {
        let band = BandConfig::default();
        let x = tone(0.1, 50.0, 6000);
        let report = spectral_concentration(&x, &band, Modality::Amplitude).unwrap();
        assert!((report.f_star_hz - 0.1).abs() <= report.bin_hz + 1e-12, "{}", report.f_star_hz);
    }

    #[test]
    fn white_noise_is_diffuse() {
        let band = BandConfig::default();
        let trials = 100;
        let mut diffuse = 0;
        for seed in 0..trials {
            let mut rng = crate::rng::rng_from_seed(1000 + seed);
            let x: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
            let spectrum = padded_spectrum(&x, 50.0);
            let n_bins = spectrum.band_bins(&band).unwrap().count() as f64;
            let report = spectral_concentration(&x, &band, Modality::Amplitude).unwrap();
            if report.q_spec <= 3.0 / n_bins {
                diffuse += 1;
            }
        }
        assert!(diffuse >= 95, "{diffuse}/100 noise trials diffuse");
    }

    #[test]
    fn band_resolution_error() {
        // 4 Hz sampling, 40 samples: bin spacing 4/256, band [0.1,0.105] has no bins
        let band = BandConfig::new(0.1, 0.105, 4.0).unwrap();
        let x = tone(0.1, 4.0, 40);
        assert!(matches!(
            spectral_concentration(&x, &band, Modality::Amplitude),
            Err(Error::BandResolution { .. })
        ));
    }

    #[test]
    fn concentration_is_scale_free() {
        let band = BandConfig::default();
        let mut rng = crate::rng::rng_from_seed(5);
        let x: Vec<f64> = tone(0.2, 50.0, 3000)
            .into_iter()
            .map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let scaled: Vec<f64> = x.iter().map(|v| 7.5 * v).collect();
        let a = spectral_concentration(&x, &band, Modality::Amplitude).unwrap();
        let b = spectral_concentration(&scaled, &band, Modality::Amplitude).unwrap();
        assert!((a.q_spec - b.q_spec).abs() < 1e-12);
        assert_eq!(a.f_star_hz, b.f_star_hz);
    }

    #[test]
    fn stability_prefers_in_band_tone() {
        let band = BandConfig::default();
        let mut scorer = StabilityScorer::new(3000, &band);
        let clean = tone(0.25, 50.0, 3000);
        let mut rng = crate::rng::rng_from_seed(8);
        let noise: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let s_clean = scorer.score(clean.iter());
        let s_noise = scorer.score(noise.iter());
        assert!(s_clean > 0.9, "{s_clean}");
        assert!(s_noise < 0.05, "{s_noise}");
        assert_eq!(scorer.score([3.0; 3000].iter()), 0.0);
    }
}
