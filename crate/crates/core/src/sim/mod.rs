//! Seeded synthetic generator of bistatic multi-antenna CSI.
//!
//! A recording is composed, in order, of
//!
//! 1. a static multipath channel: six Rayleigh paths per antenna with delays
//!    shared across antennas, normalised to unit average power;
//! 2. a respiration path 10 dB below the static power whose phase follows
//!    `2 pi d(t) / lambda` with `d(t) = D sin(2 pi f t + phi)`;
//! 3. movement bursts and interferer paths;
//! 4. circularly-symmetric complex Gaussian noise at the configured SNR,
//!    measured against the static channel power;
//! 5. transceiver offsets common to all antennas of a frame.
//!
//! All draws come from ChaCha8 sub-streams of the config seed, so a
//! `(config, seed)` pair maps to a bit-identical recording.

mod config;
mod events;

pub use config::{
    InterfererSpec, MovementSpec, OffsetSpec, Proximity, RespirationSpec, SimulationConfig,
};
pub use events::{inject_interferer, inject_movement, scatter_movements, MovementSignature, MOVEMENT_GAIN};

use ndarray::{s, Array2, Array3};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::csi::{CsiRecording, SPEED_OF_LIGHT};
use crate::error::Result;
use crate::movement::MovementClass;
use crate::rng::{substream, GENERATOR_NAME};

/// Subcarrier spacing used for path-delay phases (30 kHz numerology).
pub const SUBCARRIER_SPACING_HZ: f64 = 30e3;
pub const STATIC_PATHS: usize = 6;
pub const MAX_STATIC_DELAY_S: f64 = 400e-9;
/// Respiration path power relative to the static channel.
pub const RESPIRATION_PATH_DB: f64 = -10.0;

const STREAM_STATIC: u64 = 1;
const STREAM_RESPIRATION: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_OFFSETS: u64 = 4;
const STREAM_MOVEMENT: u64 = 0x100;
const STREAM_INTERFERER: u64 = 0x200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub interval: [f64; 2],
    pub class: MovementClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthInterferer {
    pub interval: [f64; 2],
    pub proximity: Proximity,
}

/// Labels known to the generator; written as the `.truth.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// `None` when respiration is disabled.
    pub respiration_rate_bpm: Option<f64>,
    pub movement_events: Vec<TruthEvent>,
    pub interferer_intervals: Vec<TruthInterferer>,
    pub seed: u64,
    pub generator: String,
    #[serde(default)]
    pub location: Option<String>,
}

/// Amplitude scale used for event terms: RMS magnitude of the channel they
/// are added to.
pub(crate) fn reference_amplitude(data: &Array3<Complex64>) -> f64 {
    (data.iter().map(|z| z.norm_sqr()).sum::<f64>() / data.len() as f64).sqrt()
}

pub fn respiration_path_amplitude() -> f64 {
    10f64.powf(RESPIRATION_PATH_DB / 20.0)
}

pub(crate) fn complex_normal(rng: &mut crate::rng::Rng, variance: f64) -> Complex64 {
    let sd = (variance / 2.0).sqrt();
    Complex64::new(sd * rng.sample::<f64, _>(StandardNormal), sd * rng.sample::<f64, _>(StandardNormal))
}

/// Phase ramp across subcarriers for a path delay.
pub(crate) fn delay_phasor(k: usize, delay_s: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * k as f64 * SUBCARRIER_SPACING_HZ * delay_s)
}

/// Static multipath `[antenna, subcarrier]`, unit average power.
fn static_channel(config: &SimulationConfig) -> Array2<Complex64> {
    let mut rng = substream(config.seed, STREAM_STATIC);
    let delays: Vec<f64> = (0..STATIC_PATHS)
        .map(|_| rng.random_range(0.0..MAX_STATIC_DELAY_S))
        .collect();
    let gains = Array2::from_shape_fn((config.antenna_count, STATIC_PATHS), |_| {
        complex_normal(&mut rng, 1.0 / STATIC_PATHS as f64)
    });
    Array2::from_shape_fn((config.antenna_count, config.subcarrier_count), |(i, k)| {
        (0..STATIC_PATHS)
            .map(|p| gains[[i, p]] * delay_phasor(k, delays[p]))
            .sum()
    })
}

/// Static plus respiration channel, `[antenna, subcarrier, frame]`.
fn clean_channel(config: &SimulationConfig, statics: &Array2<Complex64>) -> Array3<Complex64> {
    let (n_ant, n_sc, n_fr) = (config.antenna_count, config.subcarrier_count, config.frame_count());
    let mut data = Array3::zeros((n_ant, n_sc, n_fr));
    let resp = &config.respiration;
    if !resp.enabled {
        for ((i, k, _), z) in data.indexed_iter_mut() {
            *z = statics[[i, k]];
        }
        return data;
    }
    let mut rng = substream(config.seed, STREAM_RESPIRATION);
    let start_phase = rng.random_range(0.0..2.0 * PI);
    let delay = rng.random_range(20e-9..120e-9);
    let antenna_phase: Vec<f64> = (0..n_ant).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let wavelength = SPEED_OF_LIGHT / config.carrier_hz;
    let modulation: Vec<Complex64> = (0..n_fr)
        .map(|t| {
            let time = t as f64 * config.frame_interval;
            let d = resp.chest_displacement * (2.0 * PI * resp.rate_hz * time + start_phase).sin();
            Complex64::from_polar(1.0, 2.0 * PI * d / wavelength)
        })
        .collect();
    let amp = respiration_path_amplitude();
    for i in 0..n_ant {
        for k in 0..n_sc {
            let coef = Complex64::from_polar(amp, antenna_phase[i]) * delay_phasor(k, delay);
            let h = statics[[i, k]];
            for (z, m) in data.slice_mut(s![i, k, ..]).iter_mut().zip(&modulation) {
                *z = h + coef * m;
            }
        }
    }
    data
}

fn add_noise(data: &mut Array3<Complex64>, variance: f64, seed: u64) {
    let mut rng = substream(seed, STREAM_NOISE);
    for z in data.iter_mut() {
        *z += complex_normal(&mut rng, variance);
    }
}

/// Multiply every frame by `exp(j (theta_t + 2 pi cfo t dt))` and every
/// subcarrier by `exp(j sto k r_t)`, identically on all antennas.
pub fn apply_frame_offsets(clean: &CsiRecording, offsets: &OffsetSpec, seed: u64) -> CsiRecording {
    let mut out = clean.clone();
    apply_offsets_in_place(out.data_mut(), clean.frame_interval(), offsets, seed);
    out
}

fn apply_offsets_in_place(data: &mut Array3<Complex64>, frame_interval: f64, offsets: &OffsetSpec, seed: u64) {
    if offsets.is_identity() {
        return;
    }
    let (n_ant, n_sc, n_fr) = data.dim();
    let mut rng = substream(seed, STREAM_OFFSETS);
    let mut frame_phase = vec![0.0; n_fr];
    let mut ramp = vec![0.0; n_fr];
    for t in 0..n_fr {
        let theta = if offsets.per_frame_phase {
            rng.random_range(0.0..2.0 * PI)
        } else {
            0.0
        };
        frame_phase[t] = theta + 2.0 * PI * offsets.cfo_hz * t as f64 * frame_interval;
        ramp[t] = rng.random_range(-1.0..=1.0);
    }
    let mut factor = vec![Complex64::new(0.0, 0.0); n_fr];
    for k in 0..n_sc {
        for t in 0..n_fr {
            let sto = offsets.sto_slope_rad_per_subcarrier * k as f64 * ramp[t];
            factor[t] = Complex64::from_polar(1.0, frame_phase[t] + sto);
        }
        for i in 0..n_ant {
            for (z, f) in data.slice_mut(s![i, k, ..]).iter_mut().zip(&factor) {
                *z *= f;
            }
        }
    }
}

/// Generate a recording and its ground truth.
pub fn simulate(config: &SimulationConfig) -> Result<(CsiRecording, GroundTruth)> {
    config.validate()?;
    let statics = static_channel(config);
    let static_power = statics.iter().map(|z| z.norm_sqr()).sum::<f64>() / statics.len() as f64;
    let mut data = clean_channel(config, &statics);
    let reference = static_power.sqrt();

    let mut movements = config.movements.clone();
    movements.sort_by(|a, b| a.start.total_cmp(&b.start));
    for (n, spec) in config.movements.iter().enumerate() {
        events::add_movement(
            &mut data,
            config.frame_interval,
            spec,
            reference,
            crate::rng::derive_seed(config.seed, STREAM_MOVEMENT + n as u64),
        );
    }
    for (n, spec) in config.interferers.iter().enumerate() {
        events::add_interferer(
            &mut data,
            config.frame_interval,
            config.carrier_hz,
            spec,
            reference,
            crate::rng::derive_seed(config.seed, STREAM_INTERFERER + n as u64),
        );
    }
    if let Some(snr_db) = config.noise_snr_db {
        add_noise(&mut data, static_power / 10f64.powf(snr_db / 10.0), config.seed);
    }
    apply_offsets_in_place(&mut data, config.frame_interval, &config.offsets, config.seed);

    let recording = CsiRecording::new(data, config.frame_interval, config.carrier_hz)?;
    let truth = GroundTruth {
        respiration_rate_bpm: config.respiration.enabled.then_some(60.0 * config.respiration.rate_hz),
        movement_events: movements
            .iter()
            .map(|m| TruthEvent {
                interval: [m.start, m.end()],
                class: m.class,
            })
            .collect(),
        interferer_intervals: config
            .interferers
            .iter()
            .map(|i| TruthInterferer {
                interval: i.active_interval,
                proximity: i.proximity,
            })
            .collect(),
        seed: config.seed,
        generator: GENERATOR_NAME.to_string(),
        location: config.location.clone(),
    };
    Ok((recording, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::{frame_delta, normalize_antenna_ratio};
    use ndarray::Zip;

    fn small(seed: u64) -> SimulationConfig {
        SimulationConfig {
            subcarrier_count: 32,
            duration: 10.0,
            seed,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn quiet_channel_is_frame_constant() {
        let config = SimulationConfig {
            subcarrier_count: 64,
            duration: 4.0,
            ..SimulationConfig::quiet()
        };
        let (rec, truth) = simulate(&config).unwrap();
        for a in 0..rec.antenna_count() {
            assert!(frame_delta(&rec, a).unwrap().iter().all(|&v| v == 0.0));
        }
        assert_eq!(truth.respiration_rate_bpm, None);
    }

    #[test]
    fn static_channel_has_unit_power_on_average() {
        let config = SimulationConfig { subcarrier_count: 800, ..SimulationConfig::default() };
        let mut total = 0.0;
        for seed in 0..20 {
            let s = static_channel(&SimulationConfig { seed, ..config.clone() });
            total += s.iter().map(|z| z.norm_sqr()).sum::<f64>() / s.len() as f64;
        }
        let mean = total / 20.0;
        assert!((mean - 1.0).abs() < 0.25, "{mean}");
    }

    #[test]
    fn identical_seed_is_bit_identical() {
        let (a, ta) = simulate(&small(5)).unwrap();
        let (b, tb) = simulate(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = simulate(&small(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn offsets_off_is_bitwise_identity() {
        let (rec, _) = simulate(&SimulationConfig { offsets: OffsetSpec::none(), ..small(2) }).unwrap();
        assert_eq!(apply_frame_offsets(&rec, &OffsetSpec::none(), 77), rec);
    }

    fn max_ratio_diff(a: &CsiRecording, b: &CsiRecording) -> f64 {
        let na = normalize_antenna_ratio(a, 0).unwrap();
        let nb = normalize_antenna_ratio(b, 0).unwrap();
        Zip::from(na.data())
            .and(nb.data())
            .fold(0.0f64, |m, x, y| m.max((x - y).norm()))
    }

    #[test]
    fn frame_phase_offsets_cancel_in_ratio() {
        let (rec, _) = simulate(&SimulationConfig { offsets: OffsetSpec::none(), ..small(3) }).unwrap();
        let phase_only = OffsetSpec {
            per_frame_phase: true,
            cfo_hz: 0.0,
            sto_slope_rad_per_subcarrier: 0.0,
        };
        let shifted = apply_frame_offsets(&rec, &phase_only, 4);
        // raw phase is scrambled
        let raw_step: f64 = (1..rec.frame_count())
            .map(|t| (shifted.data()[[1, 0, t]] / shifted.data()[[1, 0, t - 1]]).arg().abs())
            .sum::<f64>()
            / (rec.frame_count() - 1) as f64;
        assert!(raw_step > 1.0, "mean raw phase step {raw_step}");
        assert!(max_ratio_diff(&rec, &shifted) <= 1e-12);
    }

    #[test]
    fn timing_ramp_cancels_in_ratio() {
        let (rec, _) = simulate(&SimulationConfig { offsets: OffsetSpec::none(), ..small(4) }).unwrap();
        let sto = OffsetSpec {
            per_frame_phase: false,
            cfo_hz: 12.5,
            sto_slope_rad_per_subcarrier: 0.05,
        };
        let shifted = apply_frame_offsets(&rec, &sto, 9);
        assert_ne!(shifted, rec);
        assert!(max_ratio_diff(&rec, &shifted) <= 1e-12);
    }

    #[test]
    fn respiration_phase_swing_at_tenth_wavelength() {
        let lambda = SPEED_OF_LIGHT / 3.5e9;
        assert!((lambda / 10.0 - 0.0086).abs() < 1e-4);
        let config = SimulationConfig {
            antenna_count: 2,
            subcarrier_count: 1,
            duration: 20.0,
            respiration: RespirationSpec {
                rate_hz: 0.25,
                chest_displacement: lambda / 10.0,
                enabled: true,
            },
            ..SimulationConfig::quiet()
        };
        let statics = static_channel(&config);
        let data = clean_channel(&config, &statics);
        // isolate the respiration path and measure its phase excursion
        let path: Vec<f64> = data
            .slice(s![0, 0, ..])
            .iter()
            .map(|z| (z - statics[[0, 0]]).arg())
            .collect();
        let mut unwrapped = path.clone();
        crate::csi::unwrap_phase(&mut unwrapped);
        let max = unwrapped.iter().cloned().fold(f64::MIN, f64::max);
        let min = unwrapped.iter().cloned().fold(f64::MAX, f64::min);
        let expected = 2.0 * (2.0 * PI / 10.0);
        assert!(((max - min) - expected).abs() < 0.01, "{} vs {expected}", max - min);
    }

    #[test]
    fn truth_reports_rate_in_bpm() {
        let (_, truth) = simulate(&small(1)).unwrap();
        assert_eq!(truth.respiration_rate_bpm, Some(15.0));
        assert!(truth.generator.contains("ChaCha8"));
    }
}
