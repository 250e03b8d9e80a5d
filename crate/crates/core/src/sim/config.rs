use serde::{Deserialize, Serialize};

use crate::csi::{DEFAULT_CARRIER_HZ, DEFAULT_FRAME_INTERVAL};
use crate::error::{Error, Result};
use crate::movement::MovementClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RespirationSpec {
    pub rate_hz: f64,
    /// Peak chest displacement in metres.
    pub chest_displacement: f64,
    pub enabled: bool,
}

impl Default for RespirationSpec {
    fn default() -> Self {
        Self {
            rate_hz: 0.25,
            chest_displacement: 0.005,
            enabled: true,
        }
    }
}

/// Transceiver offsets applied identically to every receive antenna.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffsetSpec {
    /// Independent uniform phase per frame.
    pub per_frame_phase: bool,
    pub cfo_hz: f64,
    /// Phase slope across subcarriers, scaled per frame by a uniform draw in
    /// `[-1, 1]` (timing jitter).
    pub sto_slope_rad_per_subcarrier: f64,
}

impl Default for OffsetSpec {
    fn default() -> Self {
        Self {
            per_frame_phase: true,
            cfo_hz: 37.0,
            sto_slope_rad_per_subcarrier: 0.01,
        }
    }
}

impl OffsetSpec {
    pub fn none() -> Self {
        Self {
            per_frame_phase: false,
            cfo_hz: 0.0,
            sto_slope_rad_per_subcarrier: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.per_frame_phase && self.cfo_hz == 0.0 && self.sto_slope_rad_per_subcarrier == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proximity {
    /// Within 0.5 m of the UE.
    NearUe,
    IndoorFar,
    Outdoor,
}

impl Proximity {
    /// Interferer path amplitude relative to the respiration path.
    pub fn gain_multiplier(self) -> f64 {
        match self {
            Proximity::NearUe => 10.0,
            Proximity::IndoorFar => 0.3,
            Proximity::Outdoor => 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfererSpec {
    pub proximity: Proximity,
    #[serde(default = "one")]
    pub motion_amplitude: f64,
    pub active_interval: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovementSpec {
    pub class: MovementClass,
    pub start: f64,
    pub duration: f64,
    #[serde(default = "one")]
    pub intensity: f64,
}

impl MovementSpec {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn overlaps(&self, other: &MovementSpec) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

fn one() -> f64 {
    1.0
}

/// Everything needed to synthesise one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub antenna_count: usize,
    pub subcarrier_count: usize,
    pub frame_interval: f64,
    pub duration: f64,
    pub carrier_hz: f64,
    pub respiration: RespirationSpec,
    pub offsets: OffsetSpec,
    /// `None` disables receiver noise.
    pub noise_snr_db: Option<f64>,
    pub interferers: Vec<InterfererSpec>,
    pub movements: Vec<MovementSpec>,
    pub seed: u64,
    /// Free-form tag carried into the ground truth (used for grouping).
    pub location: Option<String>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            antenna_count: 4,
            subcarrier_count: 800,
            frame_interval: DEFAULT_FRAME_INTERVAL,
            duration: 60.0,
            carrier_hz: DEFAULT_CARRIER_HZ,
            respiration: RespirationSpec::default(),
            offsets: OffsetSpec::default(),
            noise_snr_db: Some(25.0),
            interferers: Vec::new(),
            movements: Vec::new(),
            seed: 0,
            location: None,
        }
    }
}

impl SimulationConfig {
    /// A static, noiseless, offset-free channel: no respiration, no events.
    pub fn quiet() -> Self {
        Self {
            respiration: RespirationSpec {
                enabled: false,
                ..RespirationSpec::default()
            },
            offsets: OffsetSpec::none(),
            noise_snr_db: None,
            ..Self::default()
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration / self.frame_interval).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::validation(field, reason));
        if self.antenna_count < 2 || self.antenna_count > u16::MAX as usize {
            return bad("antenna_count", format!("must be in [2, 65535], got {}", self.antenna_count));
        }
        if self.subcarrier_count < 1 {
            return bad("subcarrier_count", "must be at least 1".into());
        }
        if !(self.frame_interval.is_finite() && self.frame_interval > 0.0) {
            return bad("frame_interval", format!("must be positive, got {}", self.frame_interval));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) || self.frame_count() < 2 {
            return bad("duration", format!("must yield at least 2 frames, got {} s", self.duration));
        }
        if !(self.carrier_hz.is_finite() && self.carrier_hz > 0.0) {
            return bad("carrier_hz", format!("must be positive, got {}", self.carrier_hz));
        }
        let r = &self.respiration;
        if !(0.05..=1.0).contains(&r.rate_hz) {
            return bad("respiration.rate_hz", format!("must be in [0.05, 1.0], got {}", r.rate_hz));
        }
        if !(r.chest_displacement.is_finite() && r.chest_displacement >= 0.0) {
            return bad("respiration.chest_displacement", "must be non-negative".into());
        }
        let o = &self.offsets;
        if !o.cfo_hz.is_finite() {
            return bad("offsets.cfo_hz", "must be finite".into());
        }
        if !o.sto_slope_rad_per_subcarrier.is_finite() {
            return bad("offsets.sto_slope_rad_per_subcarrier", "must be finite".into());
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return bad("noise_snr_db", "must be finite or null".into());
            }
        }
        for (n, spec) in self.interferers.iter().enumerate() {
            validate_interferer(spec, self.duration)
                .map_err(|e| prefix_field(e, &format!("interferers[{n}]")))?;
        }
        for (n, spec) in self.movements.iter().enumerate() {
            validate_movement(spec, self.duration)
                .map_err(|e| prefix_field(e, &format!("movements[{n}]")))?;
            if let Some(m) = self.movements[..n].iter().position(|o| o.overlaps(spec)) {
                return bad(&format!("movements[{n}]"), format!("overlaps movements[{m}]"));
            }
        }
        Ok(())
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Validation { field, reason } => Error::Validation {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    }
}

pub(crate) fn validate_interferer(spec: &InterfererSpec, duration: f64) -> Result<()> {
    let [a, b] = spec.active_interval;
    if !(a.is_finite() && b.is_finite() && 0.0 <= a && a < b && b <= duration + 1e-9) {
        return Err(Error::validation(
            "active_interval",
            format!("[{a}, {b}] must lie within [0, {duration}]"),
        ));
    }
    if !(spec.motion_amplitude.is_finite() && spec.motion_amplitude >= 0.0) {
        return Err(Error::validation("motion_amplitude", "must be non-negative"));
    }
    Ok(())
}

pub(crate) fn validate_movement(spec: &MovementSpec, duration: f64) -> Result<()> {
    if !(spec.duration.is_finite() && spec.duration > 0.0) {
        return Err(Error::validation("duration", "must be positive"));
    }
    if !(spec.start.is_finite() && spec.start >= 0.0 && spec.end() <= duration + 1e-9) {
        return Err(Error::validation(
            "start",
            format!("[{}, {}] must lie within [0, {duration}]", spec.start, spec.end()),
        ));
    }
    if !(spec.intensity.is_finite() && spec.intensity >= 0.0) {
        return Err(Error::validation("intensity", "must be non-negative"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimulationConfig::default().validate().unwrap();
        assert_eq!(SimulationConfig::default().frame_count(), 3000);
    }

    #[test]
    fn errors_name_the_field() {
        let mut c = SimulationConfig::default();
        c.respiration.rate_hz = 2.0;
        match c.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "respiration.rate_hz"),
            other => panic!("{other:?}"),
        }
        let mut c = SimulationConfig::default();
        c.movements = vec![
            MovementSpec { class: MovementClass::ArmMove, start: 5.0, duration: 1.0, intensity: 1.0 },
            MovementSpec { class: MovementClass::LegMove, start: 5.5, duration: 1.0, intensity: 1.0 },
        ];
        match c.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "movements[1]"),
            other => panic!("{other:?}"),
        }
        let mut c = SimulationConfig::default();
        c.interferers = vec![InterfererSpec {
            proximity: Proximity::Outdoor,
            motion_amplitude: 1.0,
            active_interval: [10.0, 70.0],
        }];
        match c.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "interferers[0].active_interval"),
            other => panic!("{other:?}"),
        }
        let c = SimulationConfig { duration: 0.02, ..SimulationConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_uses_snake_case_and_defaults() {
        let c: SimulationConfig = serde_json::from_str(
            r#"{"duration": 30, "seed": 9,
                "respiration": {"rate_hz": 0.2},
                "interferers": [{"proximity": "near_ue", "active_interval": [0, 30]}],
                "movements": [{"class": "body_turn", "start": 3, "duration": 2}]}"#,
        )
        .unwrap();
        assert_eq!(c.antenna_count, 4);
        assert_eq!(c.respiration.chest_displacement, 0.005);
        assert_eq!(c.interferers[0].proximity, Proximity::NearUe);
        assert_eq!(c.movements[0].intensity, 1.0);
        c.validate().unwrap();
        assert!(serde_json::from_str::<SimulationConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
