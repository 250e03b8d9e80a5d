//! Movement bursts and interferer paths.

use ndarray::{s, Array3};
use num_complex::Complex64;
use rand::Rng as _;
use std::f64::consts::PI;

use super::config::{validate_interferer, validate_movement, InterfererSpec, MovementSpec};
use super::{delay_phasor, reference_amplitude, respiration_path_amplitude, MAX_STATIC_DELAY_S};
use crate::csi::{CsiRecording, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::movement::MovementClass;
use crate::rng::rng_from_seed;

/// Scatterers summed into one movement burst.
const MOVEMENT_COMPONENTS: usize = 3;
/// Burst amplitude at relative amplitude 1, in units of the channel RMS.
pub const MOVEMENT_GAIN: f64 = 4.0;
const INTERFERER_RAMP_S: f64 = 0.5;

/// Per-class shape of a movement burst.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovementSignature {
    /// Typical duration, used when callers do not pick one.
    pub duration_s: f64,
    pub relative_amplitude: f64,
    /// Fraction of subcarriers the burst touches (one contiguous block).
    pub support_fraction: f64,
    /// Nominal Doppler of the moving scatterers.
    pub doppler_hz: f64,
    /// Plateau envelope instead of a single half-sine swell.
    pub sustained: bool,
}

impl MovementSignature {
    pub fn of(class: MovementClass) -> Self {
        let (duration_s, relative_amplitude, support_fraction, doppler_hz, sustained) = match class {
            MovementClass::BodyTurn => (2.0, 1.0, 1.0, 10.0, false),
            MovementClass::SittingUp => (3.0, 0.9, 1.0, 6.0, true),
            MovementClass::ArmMove => (1.0, 0.5, 0.6, 14.0, false),
            MovementClass::LegMove => (1.0, 0.35, 0.4, 12.0, false),
        };
        Self {
            duration_s,
            relative_amplitude,
            support_fraction,
            doppler_hz,
            sustained,
        }
    }

    fn envelope(&self, u: f64) -> f64 {
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        if self.sustained {
            // Tukey window with 10% cosine ramps
            let r = 0.1;
            if u < r {
                0.5 - 0.5 * (PI * u / r).cos()
            } else if u > 1.0 - r {
                0.5 - 0.5 * (PI * (1.0 - u) / r).cos()
            } else {
                1.0
            }
        } else {
            (PI * u).sin()
        }
    }
}

pub(crate) fn add_movement(
    data: &mut Array3<Complex64>,
    frame_interval: f64,
    spec: &MovementSpec,
    reference: f64,
    seed: u64,
) {
    let sig = MovementSignature::of(spec.class);
    let amplitude = MOVEMENT_GAIN * sig.relative_amplitude * spec.intensity * reference;
    if amplitude == 0.0 {
        return;
    }
    let (n_ant, n_sc, n_fr) = data.dim();
    let mut rng = rng_from_seed(seed);
    let width = ((sig.support_fraction * n_sc as f64).round() as usize).clamp(1, n_sc);
    let offset = rng.random_range(0..=n_sc - width);
    let comps: Vec<(f64, f64)> = (0..MOVEMENT_COMPONENTS)
        .map(|_| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let doppler = sign * sig.doppler_hz * rng.random_range(0.6..1.4);
            (doppler, rng.random_range(0.0..MAX_STATIC_DELAY_S))
        })
        .collect();
    let scale = (1.0 / MOVEMENT_COMPONENTS as f64).sqrt();
    let gains: Vec<Complex64> = (0..n_ant * MOVEMENT_COMPONENTS)
        .map(|_| Complex64::from_polar(scale, rng.random_range(0.0..2.0 * PI)))
        .collect();

    let first = (spec.start / frame_interval).floor().max(0.0) as usize;
    let last = ((spec.end() / frame_interval).ceil() as usize).min(n_fr);
    if first >= last {
        return;
    }
    // per-frame phasor of each component, already scaled by the envelope
    let frames = last - first;
    let mut rot = vec![Complex64::new(0.0, 0.0); MOVEMENT_COMPONENTS * frames];
    for (n, t) in (first..last).enumerate() {
        let time = t as f64 * frame_interval;
        let env = amplitude * sig.envelope((time - spec.start) / spec.duration);
        for (c, &(doppler, _)) in comps.iter().enumerate() {
            rot[c * frames + n] = Complex64::from_polar(env, 2.0 * PI * doppler * (time - spec.start));
        }
    }
    let mut coef = [Complex64::new(0.0, 0.0); MOVEMENT_COMPONENTS];
    for i in 0..n_ant {
        for k in offset..offset + width {
            for (c, &(_, delay)) in comps.iter().enumerate() {
                coef[c] = gains[i * MOVEMENT_COMPONENTS + c] * delay_phasor(k, delay);
            }
            let mut series = data.slice_mut(s![i, k, first..last]);
            for (n, z) in series.iter_mut().enumerate() {
                for c in 0..MOVEMENT_COMPONENTS {
                    *z += coef[c] * rot[c * frames + n];
                }
            }
        }
    }
}

/// Gate rising and falling over `INTERFERER_RAMP_S` inside the interval.
fn interval_gate(time: f64, [a, b]: [f64; 2]) -> f64 {
    if time < a || time > b {
        return 0.0;
    }
    let ramp = INTERFERER_RAMP_S.min((b - a) / 2.0);
    let edge = (time - a).min(b - time);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge / ramp).cos()
    }
}

pub(crate) fn add_interferer(
    data: &mut Array3<Complex64>,
    frame_interval: f64,
    carrier_hz: f64,
    spec: &InterfererSpec,
    reference: f64,
    seed: u64,
) {
    let amplitude =
        spec.proximity.gain_multiplier() * respiration_path_amplitude() * reference * spec.motion_amplitude;
    if amplitude == 0.0 {
        return;
    }
    let (n_ant, n_sc, n_fr) = data.dim();
    let mut rng = rng_from_seed(seed);
    let sway = rng.random_range(0.05..0.2);
    let sway_hz = rng.random_range(0.15..0.6);
    let sway_phase = rng.random_range(0.0..2.0 * PI);
    let gain_hz = rng.random_range(0.1..0.5);
    let gain_phase = rng.random_range(0.0..2.0 * PI);
    let delay = rng.random_range(0.0..MAX_STATIC_DELAY_S);
    let antenna_phase: Vec<f64> = (0..n_ant).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let wavelength = SPEED_OF_LIGHT / carrier_hz;

    let first = (spec.active_interval[0] / frame_interval).floor().max(0.0) as usize;
    let last = ((spec.active_interval[1] / frame_interval).ceil() as usize + 1).min(n_fr);
    if first >= last {
        return;
    }
    let path: Vec<Complex64> = (first..last)
        .map(|t| {
            let time = t as f64 * frame_interval;
            let d = sway * (2.0 * PI * sway_hz * time + sway_phase).sin();
            let g = 1.0 + 0.3 * (2.0 * PI * gain_hz * time + gain_phase).sin();
            Complex64::from_polar(
                amplitude * g * interval_gate(time, spec.active_interval),
                2.0 * PI * d / wavelength,
            )
        })
        .collect();
    for (i, &phase) in antenna_phase.iter().enumerate().take(n_ant) {
        for k in 0..n_sc {
            let coef = Complex64::from_polar(1.0, phase) * delay_phasor(k, delay);
            let mut series = data.slice_mut(s![i, k, first..last]);
            for (z, p) in series.iter_mut().zip(&path) {
                *z += coef * p;
            }
        }
    }
}

/// Place one event per entry of `classes`, in order, at random
/// non-overlapping times inside `[start_after, duration - margin]`, each
/// with its class's typical duration and separated by at least `min_gap`.
pub fn scatter_movements(
    classes: &[MovementClass],
    duration: f64,
    start_after: f64,
    min_gap: f64,
    seed: u64,
) -> Result<Vec<MovementSpec>> {
    let lengths: Vec<f64> = classes.iter().map(|&c| MovementSignature::of(c).duration_s).collect();
    let busy = lengths.iter().sum::<f64>() + min_gap * (classes.len() + 1) as f64;
    let slack = duration - start_after - busy;
    if slack < 0.0 {
        return Err(Error::validation(
            "movements",
            format!("{} events need {busy:.1} s after {start_after} s, recording lasts {duration} s", classes.len()),
        ));
    }
    // split the slack at sorted uniform cut points
    let mut rng = rng_from_seed(seed);
    let mut cuts: Vec<f64> = (0..classes.len()).map(|_| rng.random_range(0.0..=slack)).collect();
    cuts.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(classes.len());
    let mut used = 0.0;
    for (n, (&class, &len)) in classes.iter().zip(&lengths).enumerate() {
        let start = start_after + min_gap * (n + 1) as f64 + used + cuts[n];
        used += len;
        out.push(MovementSpec {
            class,
            start,
            duration: len,
            intensity: 1.0,
        });
    }
    Ok(out)
}

/// Add one movement burst to an existing recording. `existing` lists the
/// events already present; overlapping one of them is an error.
pub fn inject_movement(
    rec: &CsiRecording,
    existing: &[MovementSpec],
    spec: &MovementSpec,
    seed: u64,
) -> Result<CsiRecording> {
    validate_movement(spec, rec.duration())?;
    if let Some(n) = existing.iter().position(|e| e.overlaps(spec)) {
        return Err(Error::validation(
            "movement",
            format!("[{}, {}] overlaps existing event {n}", spec.start, spec.end()),
        ));
    }
    let mut out = rec.clone();
    let reference = reference_amplitude(rec.data());
    add_movement(out.data_mut(), rec.frame_interval(), spec, reference, seed);
    Ok(out)
}

/// Add one interferer path to an existing recording.
pub fn inject_interferer(rec: &CsiRecording, spec: &InterfererSpec, seed: u64) -> Result<CsiRecording> {
    validate_interferer(spec, rec.duration())?;
    let mut out = rec.clone();
    let reference = reference_amplitude(rec.data());
    add_interferer(out.data_mut(), rec.frame_interval(), rec.carrier_hz(), spec, reference, seed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelopes_vanish_outside_the_event() {
        for class in MovementClass::ALL {
            let sig = MovementSignature::of(class);
            assert_eq!(sig.envelope(-0.01), 0.0);
            assert_eq!(sig.envelope(1.01), 0.0);
            assert!(sig.envelope(0.5) > 0.99);
        }
        let sit = MovementSignature::of(MovementClass::SittingUp);
        assert_eq!(sit.envelope(0.3), 1.0);
        assert_eq!(sit.envelope(0.85), 1.0);
    }

    #[test]
    fn scattered_events_fit_and_do_not_overlap() {
        let classes = [MovementClass::SittingUp, MovementClass::LegMove, MovementClass::BodyTurn, MovementClass::ArmMove];
        for seed in 0..50 {
            let m = scatter_movements(&classes, 30.0, 5.0, 1.0, seed).unwrap();
            assert!(m[0].start >= 6.0 - 1e-9);
            assert!(m.last().unwrap().end() <= 29.0 + 1e-9);
            for w in m.windows(2) {
                assert!(w[1].start - w[0].end() >= 1.0 - 1e-9);
            }
        }
        assert!(scatter_movements(&classes, 10.0, 5.0, 1.0, 0).is_err());
    }

    #[test]
    fn gate_ramps() {
        assert_eq!(interval_gate(1.0, [2.0, 10.0]), 0.0);
        assert_eq!(interval_gate(5.0, [2.0, 10.0]), 1.0);
        assert!((interval_gate(2.25, [2.0, 10.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn signature_table() {
        let t = MovementSignature::of(MovementClass::BodyTurn);
        assert_eq!((t.duration_s, t.relative_amplitude, t.support_fraction), (2.0, 1.0, 1.0));
        let s = MovementSignature::of(MovementClass::SittingUp);
        assert_eq!((s.duration_s, s.relative_amplitude, s.support_fraction), (3.0, 0.9, 1.0));
        let a = MovementSignature::of(MovementClass::ArmMove);
        assert_eq!((a.duration_s, a.relative_amplitude, a.support_fraction), (1.0, 0.5, 0.6));
        let l = MovementSignature::of(MovementClass::LegMove);
        assert_eq!((l.duration_s, l.relative_amplitude, l.support_fraction), (1.0, 0.35, 0.4));
    }
}
