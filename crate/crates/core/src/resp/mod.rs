//! Respiration-rate estimation.
//!
//! Pipeline: antenna-ratio normalisation, amplitude/phase features, choice
//! of the most stable subcarrier, zero-phase bandpass of both modalities,
//! spectral concentration per modality, then peak counting on whichever
//! modality has the more concentrated spectrum.

pub mod filter;
pub mod peaks;
pub mod spectrum;

use ndarray::{s, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

pub use filter::{bandpass, BandConfig};
pub use peaks::{detect_peaks, rate_from_peaks, PeakParams};
pub use spectrum::{spectral_concentration, Modality, SpectralReport};

use crate::csi::{
    extract_features, mask_from_reference, normalize_antenna_ratio_masked, reference_mask, unwrap_phase,
    CsiRecording, FeatureTensors,
};
use crate::error::{Error, Result};
use spectrum::StabilityScorer;

/// Shortest analysis window, three periods at the 0.1 Hz band edge.
pub const MIN_WINDOW_S: f64 = 30.0;
/// Reference antenna used by the estimator.
pub const REFERENCE_ANTENNA: usize = 0;
/// Peak spacing used by the estimator, as a fraction of the dominant period.
pub const PEAK_SPACING_FRACTION: f64 = 0.6;

/// Bandpass-filtered amplitude and phase of the selected subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredSignals {
    pub x_a: Vec<f64>,
    pub x_p: Vec<f64>,
    pub antenna: usize,
    pub subcarrier: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RespirationEstimate {
    pub rate_bpm: f64,
    pub chosen_modality: Modality,
    pub amplitude: SpectralReport,
    pub phase: SpectralReport,
    /// Absolute recording times of the peaks used for the rate.
    pub peak_times: Vec<f64>,
    /// True when fewer than two usable peaks forced the spectral rate.
    pub spectral_fallback: bool,
    pub window: (f64, f64),
    pub band: BandConfig,
    pub signals: FilteredSignals,
}

impl RespirationEstimate {
    pub fn report(&self, modality: Modality) -> &SpectralReport {
        match modality {
            Modality::Amplitude => &self.amplitude,
            Modality::Phase => &self.phase,
        }
    }

    pub fn record(&self) -> EstimateRecord {
        EstimateRecord {
            rate_bpm: self.rate_bpm,
            chosen_modality: self.chosen_modality,
            q_amplitude: self.amplitude.q_spec,
            q_phase: self.phase.q_spec,
            f_star_amplitude_hz: self.amplitude.f_star_hz,
            f_star_phase_hz: self.phase.f_star_hz,
            window_s: [self.window.0, self.window.1],
            subcarrier: self.signals.subcarrier,
            antenna: self.signals.antenna,
            band_hz: [self.band.low_hz, self.band.high_hz],
        }
    }
}

/// JSON form of an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub rate_bpm: f64,
    pub chosen_modality: Modality,
    pub q_amplitude: f64,
    pub q_phase: f64,
    pub f_star_amplitude_hz: f64,
    pub f_star_phase_hz: f64,
    pub window_s: [f64; 2],
    pub subcarrier: usize,
    pub antenna: usize,
    pub band_hz: [f64; 2],
}

/// The (antenna, subcarrier) whose mean-removed amplitude series puts the
/// largest fraction of its power inside the band. Ties go to the smallest
/// antenna, then the smallest subcarrier.
pub fn select_subcarrier(features: &FeatureTensors, band: &BandConfig) -> Result<(usize, usize)> {
    let band = band.with_sample_rate(features.sample_rate_hz())?;
    select_from_amplitude(features.amplitude.view(), &features.usable, &band)
}

fn select_from_amplitude(amplitude: ArrayView3<'_, f64>, usable: &[bool], band: &BandConfig) -> Result<(usize, usize)> {
    let (n_ant, n_sc, n_fr) = amplitude.dim();
    if !usable.iter().any(|&u| u) {
        return Err(Error::NoUsableSubcarrier);
    }
    let mut scorer = StabilityScorer::new(n_fr, band);
    let mut best: Option<((usize, usize), f64)> = None;
    for i in 0..n_ant {
        for k in (0..n_sc).filter(|&k| usable[k]) {
            let series = amplitude.slice(s![i, k, ..]);
            let score = scorer.score(series.iter());
            if best.is_none_or(|(_, b)| score > b) {
                best = Some(((i, k), score));
            }
        }
    }
    Ok(best.expect("at least one usable subcarrier").0)
}

/// Modality with the larger spectral concentration; amplitude wins ties.
pub fn choose_modality(amplitude: &SpectralReport, phase: &SpectralReport) -> Modality {
    if phase.q_spec > amplitude.q_spec {
        Modality::Phase
    } else {
        Modality::Amplitude
    }
}

/// Rate from the peaks of `series`, spaced by at least a fraction of the
/// dominant period; falls back to `60 f*` when fewer than two peaks survive
/// or the peak rate leaves the band.
fn rate_for_series(series: &[f64], report: &SpectralReport, band: &BandConfig) -> (f64, Vec<f64>, bool) {
    let params = PeakParams {
        min_distance_s: PEAK_SPACING_FRACTION / report.f_star_hz,
        min_prominence: None,
    };
    let peaks = detect_peaks(series, band.sample_rate_hz, &params);
    let slack = report.bin_hz;
    match rate_from_peaks(&peaks) {
        Some(bpm) if bpm / 60.0 >= band.low_hz - slack && bpm / 60.0 <= band.high_hz + slack => {
            (bpm, peaks, false)
        }
        _ => (60.0 * report.f_star_hz, peaks, true),
    }
}

/// Estimate from precomputed features covering a window that starts at
/// `window_start_s` in the recording.
pub fn estimate_from_features(
    features: &FeatureTensors,
    band: &BandConfig,
    window_start_s: f64,
) -> Result<RespirationEstimate> {
    let band = band.with_sample_rate(features.sample_rate_hz())?;
    let (antenna, subcarrier) = select_subcarrier(features, &band)?;
    let amp: Vec<f64> = features.amplitude.slice(s![antenna, subcarrier, ..]).to_vec();
    let phase: Vec<f64> = features.phase.slice(s![antenna, subcarrier, ..]).to_vec();
    estimate_from_series(&amp, &phase, (antenna, subcarrier), &band, window_start_s, features.frame_interval)
}

fn estimate_from_series(
    amp: &[f64],
    phase: &[f64],
    (antenna, subcarrier): (usize, usize),
    band: &BandConfig,
    window_start_s: f64,
    frame_interval: f64,
) -> Result<RespirationEstimate> {
    let x_a = bandpass(amp, band)?;
    let x_p = bandpass(phase, band)?;
    let amplitude = spectral_concentration(&x_a, band, Modality::Amplitude)?;
    let phase = spectral_concentration(&x_p, band, Modality::Phase)?;
    let chosen_modality = choose_modality(&amplitude, &phase);
    let (series, report) = match chosen_modality {
        Modality::Amplitude => (&x_a, &amplitude),
        Modality::Phase => (&x_p, &phase),
    };
    let (rate_bpm, peaks, spectral_fallback) = rate_for_series(series, report, band);
    Ok(RespirationEstimate {
        rate_bpm,
        chosen_modality,
        amplitude,
        phase,
        peak_times: peaks.into_iter().map(|t| t + window_start_s).collect(),
        spectral_fallback,
        window: (window_start_s, window_start_s + amp.len() as f64 * frame_interval),
        band: *band,
        signals: FilteredSignals {
            x_a,
            x_p,
            antenna,
            subcarrier,
        },
    })
}

fn window_frames(rec: &CsiRecording, window: (f64, f64)) -> Result<std::ops::Range<usize>> {
    let range = rec.frame_range(window.0, window.1)?;
    let span = range.len() as f64 * rec.frame_interval();
    if span + 1e-9 < MIN_WINDOW_S {
        return Err(Error::InsufficientData {
            what: "respiration window frames",
            required: (MIN_WINDOW_S / rec.frame_interval()).ceil() as usize,
            actual: range.len(),
        });
    }
    Ok(range)
}

/// Crop, normalise and featurise the window `[start_s, end_s)`.
pub fn window_features(rec: &CsiRecording, window: (f64, f64)) -> Result<FeatureTensors> {
    let cropped = rec.crop_frames(window_frames(rec, window)?)?;
    let mask = reference_mask(&cropped, REFERENCE_ANTENNA)?;
    let norm = normalize_antenna_ratio_masked(&cropped, REFERENCE_ANTENNA, &mask)?;
    Ok(extract_features(&norm))
}

/// Full pipeline over one window of a recording.
///
/// Equivalent to [`window_features`] followed by [`estimate_from_features`],
/// but only the selected series' phase is ever computed.
pub fn estimate_respiration(
    rec: &CsiRecording,
    window: (f64, f64),
    band: &BandConfig,
) -> Result<RespirationEstimate> {
    let band = band.with_sample_rate(rec.sample_rate_hz())?;
    let range = window_frames(rec, window)?;
    let start = range.start as f64 * rec.frame_interval();
    let data = rec.data().slice(s![.., .., range]);
    let reference = data.index_axis(Axis(0), REFERENCE_ANTENNA);
    let usable = mask_from_reference(reference);

    // |H_i / H_ref| without forming the complex ratio
    let (n_ant, n_sc, n_fr) = data.dim();
    let mut amplitude = Array3::<f64>::ones((n_ant, n_sc, n_fr));
    let mut ref_power = vec![0.0; n_fr];
    for k in (0..n_sc).filter(|&k| usable[k]) {
        for (p, z) in ref_power.iter_mut().zip(reference.row(k)) {
            *p = z.norm_sqr();
        }
        for i in (0..n_ant).filter(|&i| i != REFERENCE_ANTENNA) {
            let mut lane = amplitude.slice_mut(s![i, k, ..]);
            for ((a, z), p) in lane.iter_mut().zip(data.slice(s![i, k, ..])).zip(&ref_power) {
                *a = (z.norm_sqr() / p).sqrt();
            }
        }
    }
    let (antenna, subcarrier) = select_from_amplitude(amplitude.view(), &usable, &band)?;
    let amp = amplitude.slice(s![antenna, subcarrier, ..]).to_vec();
    let mut phase: Vec<f64> = data
        .slice(s![antenna, subcarrier, ..])
        .iter()
        .zip(reference.row(subcarrier))
        .map(|(h, r)| if antenna == REFERENCE_ANTENNA { 0.0 } else { (h / r).arg() })
        .collect();
    unwrap_phase(&mut phase);
    estimate_from_series(&amp, &phase, (antenna, subcarrier), &band, start, rec.frame_interval())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn features_from(amplitude: Array3<f64>, phase: Array3<f64>) -> FeatureTensors {
        let n_sc = amplitude.dim().1;
        FeatureTensors {
            amplitude,
            phase,
            usable: vec![true; n_sc],
            frame_interval: 0.02,
        }
    }

    #[test]
    fn selects_the_clean_subcarrier() {
        let mut rng = crate::rng::rng_from_seed(11);
        let dims = (2, 12, 3000);
        let mut amp = Array3::from_shape_fn(dims, |_| 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal));
        for t in 0..3000 {
            amp[[1, 7, t]] = 1.0 + 0.3 * (2.0 * PI * 0.25 * t as f64 * 0.02).sin();
        }
        let f = features_from(amp, Array3::zeros(dims));
        assert_eq!(select_subcarrier(&f, &BandConfig::default()).unwrap(), (1, 7));
    }

    #[test]
    fn identical_subcarriers_tie_break_to_first() {
        let dims = (3, 5, 600);
        let amp = Array3::from_shape_fn(dims, |(_, _, t)| (2.0 * PI * 0.3 * t as f64 * 0.02).sin());
        let f = features_from(amp, Array3::zeros(dims));
        assert_eq!(select_subcarrier(&f, &BandConfig::default()).unwrap(), (0, 0));
    }

    #[test]
    fn all_masked_is_an_error() {
        let dims = (2, 3, 600);
        let mut f = features_from(Array3::zeros(dims), Array3::zeros(dims));
        f.usable = vec![false; 3];
        assert!(matches!(select_subcarrier(&f, &BandConfig::default()), Err(Error::NoUsableSubcarrier)));
    }

    #[test]
    fn amplitude_wins_ties() {
        let r = SpectralReport {
            modality: Modality::Amplitude,
            f_star_hz: 0.2,
            q_spec: 0.3,
            bin_hz: 0.01,
        };
        let p = SpectralReport { modality: Modality::Phase, ..r };
        assert_eq!(choose_modality(&r, &p), Modality::Amplitude);
        let p = SpectralReport { q_spec: 0.31, ..p };
        assert_eq!(choose_modality(&r, &p), Modality::Phase);
    }

    #[test]
    fn noiseless_tone_rates_agree() {
        let band = BandConfig::default();
        for &f in &[0.12, 0.2, 0.33, 0.45] {
            let x: Vec<f64> = (0..3000).map(|t| (2.0 * PI * f * t as f64 * 0.02).sin()).collect();
            let y = bandpass(&x, &band).unwrap();
            let report = spectral_concentration(&y, &band, Modality::Amplitude).unwrap();
            let (bpm, _, fallback) = rate_for_series(&y, &report, &band);
            assert!(!fallback);
            assert!((bpm / 60.0 - report.f_star_hz).abs() <= report.bin_hz, "f={f}: {bpm}");
            assert!((bpm / 60.0 - f).abs() < 0.005, "f={f}: {bpm}");
        }
    }

    #[test]
    fn short_window_is_rejected() {
        let rec = CsiRecording::new(
            Array3::from_elem((2, 2, 1000), num_complex::Complex64::new(1.0, 0.0)),
            0.02,
            3.5e9,
        )
        .unwrap();
        assert!(matches!(
            estimate_respiration(&rec, (0.0, 20.0), &BandConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
