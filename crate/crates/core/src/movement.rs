//! Movement energy statistics, event segmentation and classifier samples.
//!
//! Movements are read from CSI amplitude only. Per-frame transceiver offsets
//! are pure phase terms, so the raw amplitude `|H|` is unaffected by them.

use ndarray::{s, Array3, ArrayView, ArrayView3, Dimension};
use serde::{Deserialize, Serialize};

use crate::csi::CsiRecording;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MovementClass {
    BodyTurn,
    SittingUp,
    ArmMove,
    LegMove,
}

impl MovementClass {
    pub const ALL: [MovementClass; 4] = [
        MovementClass::BodyTurn,
        MovementClass::SittingUp,
        MovementClass::ArmMove,
        MovementClass::LegMove,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MovementClass::BodyTurn => "body_turn",
            MovementClass::SittingUp => "sitting_up",
            MovementClass::ArmMove => "arm_move",
            MovementClass::LegMove => "leg_move",
        }
    }
}

impl std::fmt::Display for MovementClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MovementClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::validation("class", format!("unknown movement class {s:?}")))
    }
}

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScoreParams {
    pub mu: f64,
    pub sigma: f64,
    pub epsilon: f64,
}

/// `(A - mu) / (sigma + eps)` with the population moments of the whole
/// tensor.
pub fn zscore<D: Dimension>(a: ArrayView<'_, f64, D>) -> (ndarray::Array<f64, D>, ZScoreParams) {
    zscore_with_epsilon(a, DEFAULT_EPSILON)
}

pub fn zscore_with_epsilon<D: Dimension>(
    a: ArrayView<'_, f64, D>,
    epsilon: f64,
) -> (ndarray::Array<f64, D>, ZScoreParams) {
    let n = a.len().max(1) as f64;
    let mu = a.sum() / n;
    let sigma = (a.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    let scale = 1.0 / (sigma + epsilon);
    (a.mapv(|v| (v - mu) * scale), ZScoreParams { mu, sigma, epsilon })
}

/// `|H(i, k, t)|` of the raw recording.
pub fn recording_amplitude(rec: &CsiRecording) -> Array3<f64> {
    rec.data().mapv(|z| z.norm())
}

/// `S(t) = sum_{i,k} |A(i,k,t) - A(i,k,t-1)|`, length `frames - 1`.
pub fn amplitude_delta(amplitude: ArrayView3<'_, f64>) -> Result<Vec<f64>> {
    let (n_ant, n_sc, n_fr) = amplitude.dim();
    if n_fr < 2 {
        return Err(Error::InsufficientData {
            what: "amplitude frames",
            required: 2,
            actual: n_fr,
        });
    }
    let mut s_t = vec![0.0; n_fr - 1];
    for i in 0..n_ant {
        for k in 0..n_sc {
            let series = amplitude.slice(s![i, k, ..]);
            for (t, acc) in s_t.iter_mut().enumerate() {
                *acc += (series[t + 1] - series[t]).abs();
            }
        }
    }
    Ok(s_t)
}

/// Trailing mean of the last `window` values; the window shrinks at the
/// start of the series.
pub fn short_term_energy(s_t: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::validation("window_w", "must be at least 1"));
    }
    Ok((0..s_t.len())
        .map(|j| {
            let lo = (j + 1).saturating_sub(window);
            s_t[lo..=j].iter().sum::<f64>() / (j + 1 - lo) as f64
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub window_w: usize,
    pub threshold_k: f64,
    pub min_event_s: f64,
    pub merge_gap_s: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            window_w: 25,
            threshold_k: 3.0,
            min_event_s: 0.4,
            merge_gap_s: 0.3,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_w < 1 {
            return Err(Error::validation("window_w", "must be at least 1"));
        }
        if !(self.threshold_k.is_finite() && self.threshold_k > 0.0) {
            return Err(Error::validation("threshold_k", "must be positive"));
        }
        if !(self.min_event_s.is_finite() && self.min_event_s >= 0.0) {
            return Err(Error::validation("min_event_s", "must be non-negative"));
        }
        if !(self.merge_gap_s.is_finite() && self.merge_gap_s >= 0.0) {
            return Err(Error::validation("merge_gap_s", "must be non-negative"));
        }
        Ok(())
    }
}

/// Shortest motion-free span accepted for threshold calibration.
pub const MIN_BASELINE_S: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementEvent {
    pub interval: [f64; 2],
    pub peak_energy: f64,
    pub mean_energy: f64,
    #[serde(default)]
    pub label: Option<MovementClass>,
}

impl MovementEvent {
    pub fn duration(&self) -> f64 {
        self.interval[1] - self.interval[0]
    }
}

/// Intersection over union of two intervals.
pub fn interval_iou(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let union = (a[1].max(b[1]) - a[0].min(b[0])).max(0.0);
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Energy threshold `mu + k sigma` over the baseline span.
pub fn calibrate_threshold(
    energy: &[f64],
    frame_interval: f64,
    config: &EnergyConfig,
    baseline: (f64, f64),
) -> Result<f64> {
    let (b0, b1) = baseline;
    if !(b0.is_finite() && b1.is_finite()) || b1 - b0 < MIN_BASELINE_S - 1e-9 {
        return Err(Error::Calibration(format!(
            "baseline [{b0}, {b1}] s is shorter than {MIN_BASELINE_S} s"
        )));
    }
    // E[j] describes the change into frame j + 1
    let values: Vec<f64> = energy
        .iter()
        .enumerate()
        .filter(|(j, _)| {
            let t = (*j + 1) as f64 * frame_interval;
            t >= b0 - 1e-9 && t < b1 - 1e-9
        })
        .map(|(_, &e)| e)
        .collect();
    let covered = values.len() as f64 * frame_interval;
    if covered < MIN_BASELINE_S - frame_interval - 1e-9 {
        return Err(Error::Calibration(format!(
            "baseline [{b0}, {b1}] s covers only {covered:.2} s of the recording"
        )));
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let sigma = (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    Ok(mu + config.threshold_k * sigma)
}

/// Threshold `E`, merge short gaps and drop short spans.
pub fn segment_events(
    energy: &[f64],
    frame_interval: f64,
    config: &EnergyConfig,
    baseline: (f64, f64),
) -> Result<Vec<MovementEvent>> {
    config.validate()?;
    let threshold = calibrate_threshold(energy, frame_interval, config, baseline)?;
    let time = |j: usize| (j + 1) as f64 * frame_interval;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut open: Option<usize> = None;
    for (j, &e) in energy.iter().enumerate() {
        match (e > threshold, open) {
            (true, None) => open = Some(j),
            (false, Some(a)) => {
                runs.push((a, j - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(a) = open {
        runs.push((a, energy.len() - 1));
    }

    let mut merged: Vec<(usize, usize)> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(prev) if time(run.0) - time(prev.1) < config.merge_gap_s + 1e-9 => prev.1 = run.1,
            _ => merged.push(run),
        }
    }

    Ok(merged
        .into_iter()
        .filter(|&(a, b)| time(b) - time(a) + 1e-9 >= config.min_event_s)
        .map(|(a, b)| {
            let span = &energy[a..=b];
            MovementEvent {
                interval: [time(a), time(b)],
                peak_energy: span.iter().cloned().fold(f64::MIN, f64::max),
                mean_energy: span.iter().sum::<f64>() / span.len() as f64,
                label: None,
            }
        })
        .collect())
}

/// Amplitude, `S`, `E` and segmentation in one pass.
pub fn detect_movements(
    rec: &CsiRecording,
    config: &EnergyConfig,
    baseline: (f64, f64),
) -> Result<Vec<MovementEvent>> {
    config.validate()?;
    let amplitude = recording_amplitude(rec);
    let s_t = amplitude_delta(amplitude.view())?;
    let energy = short_term_energy(&s_t, config.window_w)?;
    segment_events(&energy, rec.frame_interval(), config, baseline)
}

/// Frequency and time extent of a classifier sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGeometry {
    pub freq_bins: usize,
    pub time_steps: usize,
}

impl Default for SampleGeometry {
    fn default() -> Self {
        Self {
            freq_bins: 64,
            time_steps: 128,
        }
    }
}

/// `[channels, freq_bins, time_steps]` z-scored amplitude image.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSample {
    pub tensor: Array3<f32>,
    pub label: Option<MovementClass>,
    /// Grouping tag (e.g. deployment location) carried from the source trace.
    pub location: Option<String>,
}

/// Subcarrier blocks `[floor(j K / F), floor((j + 1) K / F))`, never empty.
pub fn pooling_blocks(subcarriers: usize, bins: usize) -> Vec<std::ops::Range<usize>> {
    (0..bins)
        .map(|j| {
            let a = (j * subcarriers / bins).min(subcarriers - 1);
            let b = ((j + 1) * subcarriers / bins).max(a + 1);
            a..b
        })
        .collect()
}

/// Mean over contiguous subcarrier blocks: `[C, K, T] -> [C, F, T]`.
pub fn pool_subcarriers(x: ArrayView3<'_, f64>, bins: usize) -> Array3<f64> {
    let (c, k, t) = x.dim();
    let blocks = pooling_blocks(k, bins);
    let mut out = Array3::zeros((c, bins, t));
    for ch in 0..c {
        for (j, block) in blocks.iter().enumerate() {
            let mut row = out.slice_mut(s![ch, j, ..]);
            for sc in block.clone() {
                row += &x.slice(s![ch, sc, ..]);
            }
            row /= block.len() as f64;
        }
    }
    out
}

/// Crop a fixed-length context centred on the event (edge frames repeat
/// past the recording ends), z-score it and pool subcarriers.
pub fn make_sample(rec: &CsiRecording, event: &MovementEvent, geometry: &SampleGeometry) -> Result<ClassifierSample> {
    if geometry.freq_bins == 0 || geometry.time_steps == 0 {
        return Err(Error::validation("geometry", "freq_bins and time_steps must be positive"));
    }
    let [a, b] = event.interval;
    if !(a.is_finite() && b.is_finite() && a <= b && a >= 0.0 && b <= rec.duration() + 1e-9) {
        return Err(Error::validation(
            "event.interval",
            format!("[{a}, {b}] is not inside [0, {}]", rec.duration()),
        ));
    }
    let (n_ant, n_sc, n_fr) = rec.data().dim();
    let centre = ((a + b) / 2.0 / rec.frame_interval()).round() as i64;
    let first = centre - (geometry.time_steps / 2) as i64;
    let mut crop = Array3::zeros((n_ant, n_sc, geometry.time_steps));
    for n in 0..geometry.time_steps {
        let t = (first + n as i64).clamp(0, n_fr as i64 - 1) as usize;
        for i in 0..n_ant {
            for k in 0..n_sc {
                crop[[i, k, n]] = rec.data()[[i, k, t]].norm();
            }
        }
    }
    let (normalized, _) = zscore(crop.view());
    let pooled = pool_subcarriers(normalized.view(), geometry.freq_bins);
    Ok(ClassifierSample {
        tensor: pooled.mapv(|v| v as f32),
        label: event.label,
        location: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn class_names_round_trip() {
        for c in MovementClass::ALL {
            assert_eq!(c.name().parse::<MovementClass>().unwrap(), c);
            assert_eq!(MovementClass::from_index(c.index()), Some(c));
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{}\"", c.name()));
        }
        assert!("wave".parse::<MovementClass>().is_err());
    }

    #[test]
    fn zscore_examples() {
        let (z, p) = zscore(Array1::from_elem(10, 3.0).view());
        assert!(z.iter().all(|&v| v == 0.0));
        assert_eq!(p.sigma, 0.0);
        let (z, p) = zscore(Array1::from(vec![0.0, 2.0, 0.0, 2.0]).view());
        assert_eq!((p.mu, p.sigma), (1.0, 1.0));
        assert!((z[0] + 1.0).abs() < 2e-6 && (z[1] - 1.0).abs() < 2e-6);
    }

    #[test]
    fn impulse_energy_plateau() {
        let mut s_t = vec![0.0; 100];
        s_t[40] = 1.0;
        let e = short_term_energy(&s_t, 25).unwrap();
        for (j, &v) in e.iter().enumerate() {
            let expected = if (40..65).contains(&j) { 1.0 / 25.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-15, "j={j}");
        }
        assert_eq!(short_term_energy(&[2.5; 40], 25).unwrap(), vec![2.5; 40]);
    }

    #[test]
    fn single_cell_step() {
        let mut a = Array3::<f64>::ones((2, 3, 10));
        for t in 4..10 {
            a[[1, 2, t]] += 0.7;
        }
        let s_t = amplitude_delta(a.view()).unwrap();
        for (t, &v) in s_t.iter().enumerate() {
            let expected = if t == 3 { 0.7 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12);
        }
    }

    fn flat_energy(n: usize, level: f64) -> Vec<f64> {
        (0..n).map(|j| level + 0.01 * ((j * 7919) % 13) as f64 / 13.0).collect()
    }

    #[test]
    fn baseline_level_has_no_events() {
        let e = flat_energy(3000, 1.0);
        let events = segment_events(&e, 0.02, &EnergyConfig::default(), (0.0, 10.0)).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn short_gaps_merge_and_short_spans_drop() {
        let mut e = flat_energy(3000, 1.0);
        // 1 s burst, 0.2 s gap, 1 s burst
        e[1000..1050].iter_mut().for_each(|v| *v = 5.0);
        e[1060..1110].iter_mut().for_each(|v| *v = 5.0);
        // 0.2 s blip
        e[2000..2010].iter_mut().for_each(|v| *v = 5.0);
        let events = segment_events(&e, 0.02, &EnergyConfig::default(), (0.0, 10.0)).unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0].interval[0] - 20.02).abs() < 1e-9);
        assert!((events[0].interval[1] - 22.2).abs() < 1e-9);
        assert_eq!(events[0].peak_energy, 5.0);
    }

    #[test]
    fn short_baseline_is_rejected() {
        let e = flat_energy(3000, 1.0);
        assert!(matches!(
            segment_events(&e, 0.02, &EnergyConfig::default(), (0.0, 4.0)),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn pooling_matches_group_means() {
        let blocks = pooling_blocks(800, 64);
        assert_eq!(blocks.len(), 64);
        assert_eq!(blocks[0], 0..12);
        assert_eq!(blocks[1], 12..25);
        assert_eq!(blocks.last().unwrap().end, 800);
        let x = Array3::from_shape_fn((1, 800, 2), |(_, k, t)| (k % 7) as f64 + t as f64);
        let pooled = pool_subcarriers(x.view(), 64);
        for (j, block) in blocks.iter().enumerate() {
            let naive: f64 = block.clone().map(|k| (k % 7) as f64).sum::<f64>() / block.len() as f64;
            assert!((pooled[[0, j, 0]] - naive).abs() < 1e-12);
        }
        // fewer subcarriers than bins still yields non-empty blocks
        assert!(pooling_blocks(3, 8).iter().all(|b| !b.is_empty()));
    }

    #[test]
    fn iou() {
        assert_eq!(interval_iou([0.0, 2.0], [1.0, 3.0]), 1.0 / 3.0);
        assert_eq!(interval_iou([0.0, 1.0], [2.0, 3.0]), 0.0);
    }
}
