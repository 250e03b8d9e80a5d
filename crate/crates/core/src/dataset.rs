//! On-disk classifier samples and their JSON manifest.
//!
//! A sample file is three little-endian `u16` dimensions `(C, F, T)`
//! followed by `C * F * T` little-endian `f32` values in row-major order.

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::csi::CsiRecording;
use crate::error::{Error, Result};
use crate::movement::{
    detect_movements, interval_iou, make_sample, ClassifierSample, EnergyConfig, MovementClass, MovementEvent,
    SampleGeometry,
};
use crate::sim::TruthEvent;

pub const MANIFEST_NAME: &str = "manifest.json";
/// Minimum interval IoU for a detection to count as a ground-truth event.
pub const MATCH_IOU: f64 = 0.5;
const SHAPE_HEADER_LEN: usize = 6;

pub fn write_sample<W: Write>(tensor: &Array3<f32>, mut out: W) -> Result<()> {
    let (c, f, t) = tensor.dim();
    let mut header = [0u8; SHAPE_HEADER_LEN];
    for (n, d) in [c, f, t].into_iter().enumerate() {
        let d = u16::try_from(d).map_err(|_| Error::validation("sample shape", format!("dimension {d} exceeds u16")))?;
        header[2 * n..2 * n + 2].copy_from_slice(&d.to_le_bytes());
    }
    let mut buf = Vec::with_capacity(SHAPE_HEADER_LEN + 4 * tensor.len());
    buf.extend_from_slice(&header);
    for v in tensor.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_sample<R: Read>(mut input: R) -> Result<Array3<f32>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < SHAPE_HEADER_LEN {
        return Err(Error::Corrupt(format!("sample file has {} bytes, shorter than its header", bytes.len())));
    }
    let dim = |n: usize| u16::from_le_bytes([bytes[2 * n], bytes[2 * n + 1]]) as usize;
    let shape = (dim(0), dim(1), dim(2));
    let expected = SHAPE_HEADER_LEN + 4 * shape.0 * shape.1 * shape.2;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "sample of shape {shape:?} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes[SHAPE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Corrupt("non-finite value in sample".into()));
    }
    Array3::from_shape_vec(shape, values).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save_sample(tensor: &Array3<f32>, path: &Path) -> Result<()> {
    write_sample(tensor, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_sample(path: &Path) -> Result<Array3<f32>> {
    read_sample(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    /// Detected event matched to a ground-truth event.
    Matched,
    /// Ground-truth event with no detection; no sample file.
    Missed,
    /// Detection with no ground-truth counterpart.
    Unmatched,
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Sample file relative to the dataset directory.
    pub file: Option<String>,
    pub label: Option<MovementClass>,
    pub source_trace: String,
    pub interval_s: [f64; 2],
    #[serde(default)]
    pub location: Option<String>,
    pub status: EntryStatus,
    /// Ground-truth interval for matched and missed rows.
    #[serde(default)]
    pub truth_interval_s: Option<[f64; 2]>,
}

pub fn save_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(entries)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
}

/// Load every row of `dir/manifest.json` that has a sample file.
pub fn load_dataset(dir: &Path) -> Result<Vec<(ManifestEntry, ClassifierSample)>> {
    let entries = load_manifest(&dir.join(MANIFEST_NAME))?;
    entries
        .into_iter()
        .filter_map(|e| e.file.clone().map(|f| (e, f)))
        .map(|(entry, file)| {
            let tensor = load_sample(&dir.join(&file))?;
            let sample = ClassifierSample {
                tensor,
                label: entry.label,
                location: entry.location.clone(),
            };
            Ok((entry, sample))
        })
        .collect()
}

/// One-to-one matching of detections to truth events by descending IoU.
/// Returns `(detection, truth)` index pairs with IoU at least `min_iou`,
/// ordered by detection index.
pub fn match_events(detected: &[MovementEvent], truth: &[TruthEvent], min_iou: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (d, ev) in detected.iter().enumerate() {
        for (t, tr) in truth.iter().enumerate() {
            let iou = interval_iou(ev.interval, tr.interval);
            if iou >= min_iou {
                candidates.push((iou, d, t));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; detected.len()];
    let mut used_t = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (_, d, t) in candidates {
        if !used_d[d] && !used_t[t] {
            used_d[d] = true;
            used_t[t] = true;
            pairs.push((d, t));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// A manifest row (without a file name yet) and the sample for matched rows.
#[derive(Debug, Clone)]
pub struct TraceSample {
    pub entry: ManifestEntry,
    pub sample: Option<ClassifierSample>,
}

/// Detect movements in one trace, match them to its truth events and cut a
/// labelled sample for every match. Missed truth events and unmatched
/// detections become sample-less rows. Rows are ordered by interval start.
pub fn trace_samples(
    rec: &CsiRecording,
    truth: &[TruthEvent],
    source_trace: &str,
    location: Option<&str>,
    energy: &EnergyConfig,
    baseline: (f64, f64),
    geometry: &SampleGeometry,
) -> Result<Vec<TraceSample>> {
    let detected = detect_movements(rec, energy, baseline)?;
    let pairs = match_events(&detected, truth, MATCH_IOU);
    let row = |interval: [f64; 2], label, status, truth_interval| ManifestEntry {
        file: None,
        label,
        source_trace: source_trace.to_string(),
        interval_s: interval,
        location: location.map(str::to_string),
        status,
        truth_interval_s: truth_interval,
    };
    let mut out = Vec::with_capacity(detected.len() + truth.len());
    let mut matched_d = vec![None; detected.len()];
    for &(d, t) in &pairs {
        matched_d[d] = Some(t);
    }
    for (d, ev) in detected.iter().enumerate() {
        match matched_d[d] {
            Some(t) => {
                let labelled = MovementEvent {
                    label: Some(truth[t].class),
                    ..ev.clone()
                };
                let mut sample = make_sample(rec, &labelled, geometry)?;
                sample.location = location.map(str::to_string);
                out.push(TraceSample {
                    entry: row(ev.interval, Some(truth[t].class), EntryStatus::Matched, Some(truth[t].interval)),
                    sample: Some(sample),
                });
            }
            None => out.push(TraceSample {
                entry: row(ev.interval, None, EntryStatus::Unmatched, None),
                sample: None,
            }),
        }
    }
    for (t, tr) in truth.iter().enumerate() {
        if !pairs.iter().any(|&(_, pt)| pt == t) {
            out.push(TraceSample {
                entry: row(tr.interval, Some(tr.class), EntryStatus::Missed, Some(tr.interval)),
                sample: None,
            });
        }
    }
    out.sort_by(|a, b| a.entry.interval_s[0].total_cmp(&b.entry.interval_s[0]));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_round_trip_and_layout() {
        let t = Array3::from_shape_fn((2, 3, 4), |(a, b, c)| (a * 100 + b * 10 + c) as f32 * 0.5);
        let mut bytes = Vec::new();
        write_sample(&t, &mut bytes).unwrap();
        assert_eq!(&bytes[..6], &[2, 0, 3, 0, 4, 0]);
        assert_eq!(bytes.len(), 6 + 4 * 24);
        assert_eq!(&bytes[6 + 4..6 + 8], &0.5f32.to_le_bytes());
        assert_eq!(read_sample(&bytes[..]).unwrap(), t);
        assert!(matches!(read_sample(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn manifest_rows_use_snake_case() {
        let row = ManifestEntry {
            file: None,
            label: Some(MovementClass::LegMove),
            source_trace: "a.csi".into(),
            interval_s: [1.0, 2.0],
            location: Some("tier_0".into()),
            status: EntryStatus::Missed,
            truth_interval_s: Some([1.0, 2.0]),
        };
        let text = serde_json::to_string(&row).unwrap();
        assert!(text.contains("\"label\":\"leg_move\""));
        assert!(text.contains("\"status\":\"missed\""));
        assert!(text.contains("\"file\":null"));
    }

    fn det(a: f64, b: f64) -> MovementEvent {
        MovementEvent {
            interval: [a, b],
            peak_energy: 1.0,
            mean_energy: 1.0,
            label: None,
        }
    }

    #[test]
    fn matching_is_one_to_one() {
        let truth = vec![
            TruthEvent { interval: [10.0, 12.0], class: MovementClass::BodyTurn },
            TruthEvent { interval: [20.0, 21.0], class: MovementClass::ArmMove },
        ];
        let detected = vec![det(10.1, 12.0), det(10.0, 11.8), det(30.0, 31.0), det(20.0, 21.1)];
        let pairs = match_events(&detected, &truth, MATCH_IOU);
        assert_eq!(pairs, vec![(0, 0), (3, 1)]);
        assert!(match_events(&[det(0.0, 1.0)], &truth, MATCH_IOU).is_empty());
    }
}
