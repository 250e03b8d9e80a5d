//! Time-domain peak picking on bandpass-filtered series.

/// Peak picking thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakParams {
    /// Minimum spacing between accepted peaks.
    pub min_distance_s: f64,
    /// Minimum topographic prominence; `None` means 0.25 x series std.
    pub min_prominence: Option<f64>,
}

impl PeakParams {
    /// Defaults for a band whose upper edge is `high_hz`.
    pub fn for_high_edge(high_hz: f64) -> Self {
        Self {
            min_distance_s: 1.0 / high_hz,
            min_prominence: None,
        }
    }
}

pub const DEFAULT_PROMINENCE_FRACTION: f64 = 0.25;

fn std_dev(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Strict local maxima; a flat top counts once, at its middle sample.
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks
}

/// Keep the tallest peaks first, discarding any peak closer than
/// `distance` samples to one already kept.
fn enforce_distance(x: &[f64], peaks: &[usize], distance: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..peaks.len()).collect();
    order.sort_by(|&a, &b| x[peaks[b]].total_cmp(&x[peaks[a]]).then(a.cmp(&b)));
    let mut keep = vec![true; peaks.len()];
    for &idx in &order {
        if !keep[idx] {
            continue;
        }
        let p = peaks[idx];
        for j in (0..idx).rev() {
            if p - peaks[j] >= distance {
                break;
            }
            keep[j] = false;
        }
        for j in idx + 1..peaks.len() {
            if peaks[j] - p >= distance {
                break;
            }
            keep[j] = false;
        }
    }
    peaks
        .iter()
        .zip(keep)
        .filter_map(|(&p, k)| k.then_some(p))
        .collect()
}

/// Height above the higher of the two bases, where each base is the lowest
/// point between the peak and the nearest strictly higher sample (or the
/// series edge) on that side.
pub fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Sample indices of accepted peaks, strictly increasing.
pub fn detect_peak_indices(series: &[f64], sample_rate_hz: f64, params: &PeakParams) -> Vec<usize> {
    let distance = ((params.min_distance_s * sample_rate_hz) - 1e-9).ceil().max(1.0) as usize;
    let min_prominence = params
        .min_prominence
        .unwrap_or_else(|| DEFAULT_PROMINENCE_FRACTION * std_dev(series));
    let candidates = enforce_distance(series, &local_maxima(series), distance);
    candidates
        .into_iter()
        .filter(|&p| {
            let prom = prominence(series, p);
            prom > 0.0 && prom >= min_prominence
        })
        .collect()
}

/// Peak times in seconds from the first sample.
pub fn detect_peaks(series: &[f64], sample_rate_hz: f64, params: &PeakParams) -> Vec<f64> {
    detect_peak_indices(series, sample_rate_hz, params)
        .into_iter()
        .map(|i| i as f64 / sample_rate_hz)
        .collect()
}

/// Breaths per minute from peak times: `60 (n - 1) / (t_n - t_1)`.
pub fn rate_from_peaks(peaks: &[f64]) -> Option<f64> {
    match peaks {
        [first, .., last] if last > first => Some(60.0 * (peaks.len() - 1) as f64 / (last - first)),
        _ => None,
    }
}
