use ndarray::{Array2, Array3};
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

use srs_sense::csi::{
    estimate_csi, extract_features, normalize_antenna_ratio, unwrap_phase, CsiRecording, SounderGrid,
};
use srs_sense::trace::{read_trace, write_trace, HEADER_LEN};
use srs_sense::Error;

fn recording(data: Array3<Complex64>) -> CsiRecording {
    CsiRecording::new(data, 0.02, 3.5e9).unwrap()
}

fn polar(r: f64, theta: f64) -> Complex64 {
    Complex64::from_polar(r, theta)
}

/// Tensors with reference magnitudes in [0.5, 2] so ratios stay O(1).
fn bounded_tensor(n_ant: usize, n_sc: usize, n_fr: usize) -> impl Strategy<Value = Array3<Complex64>> {
    let n = n_ant * n_sc * n_fr;
    prop::collection::vec((0.5f64..2.0, -PI..PI), n).prop_map(move |v| {
        Array3::from_shape_vec((n_ant, n_sc, n_fr), v.into_iter().map(|(r, t)| polar(r, t)).collect()).unwrap()
    })
}

#[test]
fn channel_estimate_recovers_a_constant_channel() {
    let c = polar(2.0, PI / 4.0);
    let x = Array2::from_shape_fn((12, 7), |(k, t)| polar(1.0, 0.37 * k as f64 - 1.1 * t as f64));
    let y = x.mapv(|v| c * v);
    let h = estimate_csi(&SounderGrid::new(y, x).unwrap()).unwrap();
    assert!(h.iter().all(|z| (z - c).norm() <= 1e-12));
}

#[test]
fn channel_estimate_names_the_degenerate_element() {
    let mut x = Array2::from_elem((3, 4), Complex64::new(1.0, 0.0));
    x[[2, 1]] = Complex64::new(1e-13, 0.0);
    let y = x.clone();
    match estimate_csi(&SounderGrid::new(y, x).unwrap()) {
        Err(Error::DegenerateReference { subcarrier, frame, .. }) => assert_eq!((subcarrier, frame), (2, 1)),
        other => panic!("expected degenerate reference, got {other:?}"),
    }
}

#[test]
fn trace_rejects_unknown_magic_and_version() {
    let rec = recording(Array3::from_elem((2, 3, 4), Complex64::new(0.5, -0.25)));
    let mut bytes = Vec::new();
    write_trace(&rec, &mut bytes).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[..4].copy_from_slice(b"CSI4");
    assert!(matches!(read_trace(&bad_magic[..]), Err(Error::Corrupt(_))));

    let mut bad_version = bytes.clone();
    bad_version[4..6].copy_from_slice(&2u16.to_le_bytes());
    assert!(matches!(read_trace(&bad_version[..]), Err(Error::Corrupt(_))));

    assert!(matches!(read_trace(&bytes[..bytes.len() - 3]), Err(Error::Corrupt(_))));
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(matches!(read_trace(&longer[..]), Err(Error::Corrupt(_))));
}

#[test]
fn trace_layout_is_frame_then_antenna_then_subcarrier() {
    let data = Array3::from_shape_fn((2, 3, 2), |(i, k, t)| Complex64::new((100 * t + 10 * i + k) as f64, -1.0));
    let mut bytes = Vec::new();
    write_trace(&recording(data), &mut bytes).unwrap();
    assert_eq!(bytes.len(), HEADER_LEN + 2 * 3 * 2 * 8);
    let re_at = |n: usize| f32::from_le_bytes(bytes[HEADER_LEN + 8 * n..HEADER_LEN + 8 * n + 4].try_into().unwrap());
    // frame 0: antenna 0 subcarriers 0..3, antenna 1 subcarriers 0..3; then frame 1
    let expected = [0.0, 1.0, 2.0, 10.0, 11.0, 12.0, 100.0, 101.0, 102.0, 110.0, 111.0, 112.0];
    for (n, &e) in expected.iter().enumerate() {
        assert_eq!(re_at(n), e);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_round_trip_is_exact_at_f32(data in bounded_tensor(3, 5, 6)) {
        let rec = recording(data.mapv(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64)));
        let mut bytes = Vec::new();
        write_trace(&rec, &mut bytes).unwrap();
        prop_assert_eq!(bytes.len(), HEADER_LEN + 3 * 5 * 6 * 8);
        let back = read_trace(&bytes[..]).unwrap();
        prop_assert_eq!(back.data(), rec.data());
        prop_assert_eq!(back.frame_interval(), 0.02);
        prop_assert_eq!(back.carrier_hz(), 3.5e9);
    }

    #[test]
    fn common_phasors_cancel_in_the_ratio(
        data in bounded_tensor(3, 4, 8),
        thetas in prop::collection::vec(-PI..PI, 8),
    ) {
        let rec = recording(data.clone());
        let mut shifted = data;
        for ((_, _, t), z) in shifted.indexed_iter_mut() {
            *z *= polar(1.0, thetas[t]);
        }
        let a = normalize_antenna_ratio(&rec, 0).unwrap();
        let b = normalize_antenna_ratio(&recording(shifted), 0).unwrap();
        let worst = a.data().iter().zip(b.data().iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-12, "max change {worst:e}");
        prop_assert!(a.data().index_axis(ndarray::Axis(0), 0).iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn unwrap_removes_jumps_and_keeps_angles(raw in prop::collection::vec(-PI..PI, 2..200)) {
        let mut series = raw.clone();
        unwrap_phase(&mut series);
        prop_assert_eq!(series[0], raw[0]);
        for w in series.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= PI + 1e-12);
        }
        for (u, r) in series.iter().zip(&raw) {
            let turns = (u - r) / (2.0 * PI);
            prop_assert!((turns - turns.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn features_are_magnitude_and_unwrapped_angle(data in bounded_tensor(2, 3, 10)) {
        let norm = normalize_antenna_ratio(&recording(data.clone()), 0).unwrap();
        let f = extract_features(&norm);
        for ((i, k, t), z) in norm.data().indexed_iter() {
            prop_assert!((f.amplitude[[i, k, t]] - z.norm()).abs() <= 1e-12);
            let turns = (f.phase[[i, k, t]] - z.arg()) / (2.0 * PI);
            prop_assert!((turns - turns.round()).abs() < 1e-9);
        }
    }
}
