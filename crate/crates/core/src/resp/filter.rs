//! Zero-phase Butterworth bandpass.
//!
//! The band is realised as a 4th-order high-pass at `low_hz` cascaded with a
//! 4th-order low-pass at `high_hz`, each split into second-order sections
//! (bilinear transform with pre-warping). Filtering runs forward then
//! backward over an odd-extended copy of the input, with section states
//! started at their step-response steady state.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const BUTTERWORTH_ORDER: usize = 4;

/// Respiration band and the sampling rate of the series being filtered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub sample_rate_hz: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            low_hz: 0.1,
            high_hz: 0.5,
            sample_rate_hz: 50.0,
        }
    }
}

impl BandConfig {
    pub fn new(low_hz: f64, high_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let band = Self {
            low_hz,
            high_hz,
            sample_rate_hz,
        };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.low_hz.is_finite()
            && self.high_hz.is_finite()
            && self.sample_rate_hz.is_finite()
            && 0.0 < self.low_hz
            && self.low_hz < self.high_hz
            && self.high_hz < self.sample_rate_hz / 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "band",
                format!(
                    "need 0 < low < high < fs/2, got low={} high={} fs={}",
                    self.low_hz, self.high_hz, self.sample_rate_hz
                ),
            ))
        }
    }

    pub fn with_sample_rate(self, sample_rate_hz: f64) -> Result<Self> {
        Self::new(self.low_hz, self.high_hz, sample_rate_hz)
    }

    /// Shortest series that holds one full period of `low_hz`.
    pub fn min_samples(&self) -> usize {
        (self.sample_rate_hz / self.low_hz).ceil() as usize
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.low_hz - 1e-12 && f <= self.high_hz + 1e-12
    }
}

/// Transposed direct-form II biquad, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// State after an infinitely long unit-step input.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * y;
        let z1 = self.b[1] - self.a[0] * y + z2;
        [z1, z2]
    }

    /// Frequency response magnitude at `f` for sample rate `fs`.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let z1 = num_complex::Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = 1.0 + self.a[0] * z1 + self.a[1] * z2;
        (num / den).norm()
    }
}

fn section_qs(order: usize) -> impl Iterator<Item = f64> {
    (0..order / 2).map(move |m| 1.0 / (2.0 * (PI * (2 * m + 1) as f64 / (2 * order) as f64).sin()))
}

fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Vec<Biquad> {
    let k = (PI * cutoff_hz / fs).tan();
    section_qs(order)
        .map(|q| {
            let norm = 1.0 / (1.0 + k / q + k * k);
            let b0 = k * k * norm;
            Biquad {
                b: [b0, 2.0 * b0, b0],
                a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            }
        })
        .collect()
}

fn butter_highpass(order: usize, cutoff_hz: f64, fs: f64) -> Vec<Biquad> {
    let k = (PI * cutoff_hz / fs).tan();
    section_qs(order)
        .map(|q| {
            let norm = 1.0 / (1.0 + k / q + k * k);
            Biquad {
                b: [norm, -2.0 * norm, norm],
                a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            }
        })
        .collect()
}

/// Second-order sections of the bandpass for `band`.
pub fn design_bandpass(band: &BandConfig) -> Vec<Biquad> {
    let mut sos = butter_highpass(BUTTERWORTH_ORDER, band.low_hz, band.sample_rate_hz);
    sos.extend(butter_lowpass(BUTTERWORTH_ORDER, band.high_hz, band.sample_rate_hz));
    sos
}

/// One-pass magnitude response of the cascade.
pub fn cascade_magnitude(sos: &[Biquad], f: f64, fs: f64) -> f64 {
    sos.iter().map(|s| s.magnitude(f, fs)).product()
}

fn sosfilt(sos: &[Biquad], x: &mut [f64]) {
    let x0 = match x.first() {
        Some(&v) => v,
        None => return,
    };
    let mut scale = x0;
    for s in sos {
        let [mut z1, mut z2] = s.step_state().map(|z| z * scale);
        scale *= s.dc_gain();
        let [b0, b1, b2] = s.b;
        let [a1, a2] = s.a;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Forward-backward filtering with odd extension of `padlen` samples at
/// each end.
pub fn filtfilt(sos: &[Biquad], x: &[f64], padlen: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let padlen = padlen.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    ext.extend((1..=padlen).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=padlen).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    sosfilt(sos, &mut ext);
    ext.reverse();
    sosfilt(sos, &mut ext);
    ext.reverse();
    ext[padlen..padlen + n].to_vec()
}

/// Zero-phase bandpass of `series` to `band`; output has the input's length.
pub fn bandpass(series: &[f64], band: &BandConfig) -> Result<Vec<f64>> {
    band.validate()?;
    let required = band.min_samples();
    if series.len() < required {
        return Err(Error::InsufficientData {
            what: "bandpass input samples",
            required,
            actual: series.len(),
        });
    }
    if !series.iter().all(|v| v.is_finite()) {
        return Err(Error::validation("series", "non-finite sample"));
    }
    let sos = design_bandpass(band);
    // three periods of the low cut-off settles the high-pass sections
    let padlen = 3 * required;
    Ok(filtfilt(&sos, series, padlen))
}
