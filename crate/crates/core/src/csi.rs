//! CSI tensors and the per-frame feature operations.
//!
//! Tensors are stored as `[antenna, subcarrier, frame]` so that the time
//! series of one (antenna, subcarrier) pair is contiguous in memory.

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One complex channel coefficient.
pub type ComplexSample = Complex64;

/// Default CSI cadence: one sounding every 20 ms.
pub const DEFAULT_FRAME_INTERVAL: f64 = 0.020;
/// Default carrier (n78 band).
pub const DEFAULT_CARRIER_HZ: f64 = 3.5e9;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Reference magnitudes below this are rejected by the divisions.
pub const DEGENERATE_MAGNITUDE: f64 = 1e-12;
/// Subcarriers whose reference magnitude drops below this fraction of the
/// median reference magnitude in any frame are masked.
pub const MASK_RELATIVE_FLOOR: f64 = 1e-6;

/// Received and transmitted sounding symbols on the resource grid,
/// both `[subcarrier, frame]`.
#[derive(Debug, Clone)]
pub struct SounderGrid {
    received: Array2<Complex64>,
    reference: Array2<Complex64>,
}

impl SounderGrid {
    pub fn new(received: Array2<Complex64>, reference: Array2<Complex64>) -> Result<Self> {
        if received.dim() != reference.dim() {
            let (a, b) = received.dim();
            let (c, d) = reference.dim();
            return Err(Error::ShapeMismatch {
                expected: vec![a, b],
                actual: vec![c, d],
            });
        }
        if !received.iter().chain(reference.iter()).all(|z| z.is_finite()) {
            return Err(Error::validation("sounder grid", "non-finite symbol"));
        }
        Ok(Self { received, reference })
    }

    pub fn received(&self) -> &Array2<Complex64> {
        &self.received
    }

    pub fn reference(&self) -> &Array2<Complex64> {
        &self.reference
    }
}

/// Least-squares channel estimate per resource element: `H = Y / X`.
pub fn estimate_csi(grid: &SounderGrid) -> Result<Array2<Complex64>> {
    if let Some(((k, t), x)) = grid
        .reference
        .indexed_iter()
        .find(|(_, x)| x.norm() < DEGENERATE_MAGNITUDE)
    {
        return Err(Error::DegenerateReference {
            subcarrier: k,
            frame: t,
            magnitude: x.norm(),
        });
    }
    Ok(Zip::from(&grid.received)
        .and(&grid.reference)
        .map_collect(|y, x| y / x))
}

/// A multi-antenna CSI recording `H(i, k, t)` with its timing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiRecording {
    data: Array3<Complex64>,
    frame_interval: f64,
    carrier_hz: f64,
}

impl CsiRecording {
    pub fn new(data: Array3<Complex64>, frame_interval: f64, carrier_hz: f64) -> Result<Self> {
        let (a, k, t) = data.dim();
        if a < 2 {
            return Err(Error::validation("antenna_count", format!("need at least 2, got {a}")));
        }
        if k < 1 {
            return Err(Error::validation("subcarrier_count", "need at least 1"));
        }
        if t < 2 {
            return Err(Error::validation("frame_count", format!("need at least 2, got {t}")));
        }
        if !(frame_interval.is_finite() && frame_interval > 0.0) {
            return Err(Error::validation("frame_interval", "must be positive"));
        }
        if !(carrier_hz.is_finite() && carrier_hz > 0.0) {
            return Err(Error::validation("carrier_hz", "must be positive"));
        }
        if !data.iter().all(|z| z.is_finite()) {
            return Err(Error::validation("data", "non-finite CSI sample"));
        }
        Ok(Self {
            data,
            frame_interval,
            carrier_hz,
        })
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<Complex64> {
        self.data
    }

    /// Mutable access for generators. Callers must keep every sample finite.
    pub(crate) fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    pub fn antenna_count(&self) -> usize {
        self.data.dim().0
    }

    pub fn subcarrier_count(&self) -> usize {
        self.data.dim().1
    }

    pub fn frame_count(&self) -> usize {
        self.data.dim().2
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier_hz
    }

    pub fn sample_rate_hz(&self) -> f64 {
        1.0 / self.frame_interval
    }

    pub fn duration(&self) -> f64 {
        self.frame_count() as f64 * self.frame_interval
    }

    /// Series of one (antenna, subcarrier) pair.
    pub fn series(&self, antenna: usize, subcarrier: usize) -> ArrayView1<'_, Complex64> {
        self.data.slice(s![antenna, subcarrier, ..])
    }

    /// Frame index range covering `[start_s, end_s)`.
    pub fn frame_range(&self, start_s: f64, end_s: f64) -> Result<std::ops::Range<usize>> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || end_s <= start_s {
            return Err(Error::validation(
                "window",
                format!("[{start_s}, {end_s}] is not a valid interval"),
            ));
        }
        let first = (start_s / self.frame_interval).round() as usize;
        let last = (end_s / self.frame_interval).round() as usize;
        if last > self.frame_count() {
            return Err(Error::validation(
                "window",
                format!("ends at {end_s} s, recording lasts {} s", self.duration()),
            ));
        }
        Ok(first..last)
    }

    /// Copy of the frames in `range`.
    pub fn crop_frames(&self, range: std::ops::Range<usize>) -> Result<CsiRecording> {
        if range.end > self.frame_count() || range.len() < 2 {
            return Err(Error::InsufficientData {
                what: "cropped recording frames",
                required: 2,
                actual: range.len(),
            });
        }
        Ok(CsiRecording {
            data: self.data.slice(s![.., .., range]).to_owned(),
            frame_interval: self.frame_interval,
            carrier_hz: self.carrier_hz,
        })
    }
}

/// Antenna-ratio CSI `H(i,k,t) / H(ref,k,t)`.
#[derive(Debug, Clone)]
pub struct NormalizedCsi {
    data: Array3<Complex64>,
    ref_antenna: usize,
    usable: Vec<bool>,
    frame_interval: f64,
}

impl NormalizedCsi {
    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn ref_antenna(&self) -> usize {
        self.ref_antenna
    }

    /// Per-subcarrier usability; masked subcarriers hold `1 + 0j`.
    pub fn usable(&self) -> &[bool] {
        &self.usable
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }
}

/// Subcarriers whose reference-antenna magnitude stays above
/// `MASK_RELATIVE_FLOOR` times the median reference magnitude in every frame.
pub fn reference_mask(rec: &CsiRecording, ref_antenna: usize) -> Result<Vec<bool>> {
    check_antenna(rec, ref_antenna)?;
    Ok(mask_from_reference(rec.data.index_axis(Axis(0), ref_antenna)))
}

/// Masking rule applied to a `[subcarrier, frame]` reference slice.
pub(crate) fn mask_from_reference(reference: ArrayView2<'_, Complex64>) -> Vec<bool> {
    let mut power: Vec<f64> = reference.iter().map(|z| z.norm_sqr()).collect();
    let mid = power.len() / 2;
    let (_, median, _) = power.select_nth_unstable_by(mid, f64::total_cmp);
    let floor = (median.sqrt() * MASK_RELATIVE_FLOOR).max(DEGENERATE_MAGNITUDE);
    let floor_sq = floor * floor;
    reference
        .outer_iter()
        .map(|row| row.iter().all(|z| z.norm_sqr() >= floor_sq))
        .collect()
}

/// Divide every antenna by the reference antenna.
///
/// Fails on the first reference sample below [`DEGENERATE_MAGNITUDE`].
pub fn normalize_antenna_ratio(rec: &CsiRecording, ref_antenna: usize) -> Result<NormalizedCsi> {
    let all = vec![true; rec.subcarrier_count()];
    normalize_antenna_ratio_masked(rec, ref_antenna, &all)
}

/// As [`normalize_antenna_ratio`], skipping subcarriers where `usable` is false.
pub fn normalize_antenna_ratio_masked(
    rec: &CsiRecording,
    ref_antenna: usize,
    usable: &[bool],
) -> Result<NormalizedCsi> {
    check_antenna(rec, ref_antenna)?;
    if usable.len() != rec.subcarrier_count() {
        return Err(Error::ShapeMismatch {
            expected: vec![rec.subcarrier_count()],
            actual: vec![usable.len()],
        });
    }
    let (n_ant, n_sc, n_fr) = rec.data.dim();
    let one = Complex64::new(1.0, 0.0);
    let mut out = Array3::from_elem((n_ant, n_sc, n_fr), one);
    for (k, &ok) in usable.iter().enumerate() {
        if !ok {
            continue;
        }
        let reference = rec.data.slice(s![ref_antenna, k, ..]);
        if let Some((t, z)) = reference
            .iter()
            .enumerate()
            .find(|(_, z)| z.norm() < DEGENERATE_MAGNITUDE)
        {
            return Err(Error::DegenerateReference {
                subcarrier: k,
                frame: t,
                magnitude: z.norm(),
            });
        }
        for i in (0..n_ant).filter(|&i| i != ref_antenna) {
            let src = rec.data.slice(s![i, k, ..]);
            let mut dst = out.slice_mut(s![i, k, ..]);
            Zip::from(&mut dst)
                .and(&src)
                .and(&reference)
                .for_each(|d, h, r| *d = h / r);
        }
    }
    Ok(NormalizedCsi {
        data: out,
        ref_antenna,
        usable: usable.to_vec(),
        frame_interval: rec.frame_interval,
    })
}

/// Amplitude and time-unwrapped phase of the antenna-ratio CSI.
#[derive(Debug, Clone)]
pub struct FeatureTensors {
    pub amplitude: Array3<f64>,
    pub phase: Array3<f64>,
    pub usable: Vec<bool>,
    pub frame_interval: f64,
}

impl FeatureTensors {
    pub fn sample_rate_hz(&self) -> f64 {
        1.0 / self.frame_interval
    }
}

pub fn extract_features(norm: &NormalizedCsi) -> FeatureTensors {
    let amplitude = norm.data.mapv(|z| z.norm_sqr().sqrt());
    let mut phase = norm.data.mapv(|z| z.arg());
    for mut lane in phase.lanes_mut(Axis(2)) {
        let series = lane
            .as_slice_mut()
            .expect("phase lanes are contiguous in standard layout");
        unwrap_phase(series);
    }
    FeatureTensors {
        amplitude,
        phase,
        usable: norm.usable.clone(),
        frame_interval: norm.frame_interval,
    }
}

/// Sequential phase unwrap: whenever a step exceeds pi in magnitude, shift
/// the remainder of the series by the multiple of 2*pi that brings the step
/// back into `[-pi, pi]`.
pub fn unwrap_phase(series: &mut [f64]) {
    let two_pi = 2.0 * PI;
    let mut offset = 0.0;
    let mut prev = match series.first() {
        Some(&p) => p,
        None => return,
    };
    for x in series.iter_mut().skip(1) {
        let raw = *x;
        let step = raw - prev;
        if step.abs() > PI {
            offset -= two_pi * ((step + PI) / two_pi).floor();
        }
        prev = raw;
        *x = raw + offset;
    }
}

/// Frame-to-frame change at one antenna: `S(t) = sum_k |H(k,t) - H(k,t-1)|`.
///
/// The result has `frame_count - 1` entries; entry `j` compares frames `j+1`
/// and `j`.
pub fn frame_delta(rec: &CsiRecording, antenna: usize) -> Result<Vec<f64>> {
    check_antenna(rec, antenna)?;
    let n_fr = rec.frame_count();
    let mut out = vec![0.0; n_fr - 1];
    for series in rec.data.index_axis(Axis(0), antenna).outer_iter() {
        for (t, acc) in out.iter_mut().enumerate() {
            *acc += (series[t + 1] - series[t]).norm();
        }
    }
    Ok(out)
}

fn check_antenna(rec: &CsiRecording, antenna: usize) -> Result<()> {
    if antenna >= rec.antenna_count() {
        return Err(Error::validation(
            "antenna",
            format!("index {antenna} out of range (0..{})", rec.antenna_count()),
        ));
    }
    Ok(())
}
