use ndarray::{s, Array3};
use proptest::prelude::*;

use srs_sense::movement::{
    amplitude_delta, calibrate_threshold, detect_movements, interval_iou, make_sample, pool_subcarriers,
    pooling_blocks, recording_amplitude, segment_events, short_term_energy, zscore, EnergyConfig, MovementClass,
    MovementEvent, SampleGeometry,
};
use srs_sense::sim::{simulate, MovementSignature, MovementSpec, SimulationConfig};

fn naive_energy(s_t: &[f64], w: usize) -> Vec<f64> {
    (0..s_t.len())
        .map(|j| {
            let taus: Vec<usize> = (0..w).filter(|&tau| tau <= j).collect();
            taus.iter().map(|&tau| s_t[j - tau]).sum::<f64>() / taus.len() as f64
        })
        .collect()
}

fn one_event_config(class: MovementClass, seed: u64) -> SimulationConfig {
    SimulationConfig {
        subcarrier_count: 64,
        duration: 20.0,
        movements: vec![MovementSpec {
            class,
            start: 12.0,
            duration: MovementSignature::of(class).duration_s,
            intensity: 1.0,
        }],
        seed,
        ..Default::default()
    }
}

#[test]
fn body_turn_stands_out_of_the_delta_series() {
    for seed in 0..5 {
        let (rec, truth) = simulate(&one_event_config(MovementClass::BodyTurn, seed)).unwrap();
        let s_t = amplitude_delta(recording_amplitude(&rec).view()).unwrap();
        let [a, b] = truth.movement_events[0].interval;
        let inside = |j: usize| {
            let t = (j + 1) as f64 * rec.frame_interval();
            t >= a && t <= b
        };
        let peak = s_t.iter().enumerate().filter(|(j, _)| inside(*j)).map(|(_, v)| *v).fold(0.0, f64::max);
        let mut outside: Vec<f64> = s_t.iter().enumerate().filter(|(j, _)| !inside(*j)).map(|(_, v)| *v).collect();
        outside.sort_by(f64::total_cmp);
        let median = outside[outside.len() / 2];
        assert!(peak >= 5.0 * median, "seed {seed}: {peak} vs {median}");
    }
}

#[test]
fn every_class_is_detected_near_its_truth() {
    for (n, class) in MovementClass::ALL.into_iter().enumerate() {
        let (rec, truth) = simulate(&one_event_config(class, 40 + n as u64)).unwrap();
        let found = detect_movements(&rec, &EnergyConfig::default(), (0.0, 10.0)).unwrap();
        let best = found
            .iter()
            .map(|e| interval_iou(e.interval, truth.movement_events[0].interval))
            .fold(0.0, f64::max);
        assert!(best >= 0.5, "{class:?}: best IoU {best}, events {found:?}");
    }
}

#[test]
fn quiet_recording_has_no_events() {
    let cfg = SimulationConfig {
        subcarrier_count: 64,
        duration: 30.0,
        seed: 3,
        ..Default::default()
    };
    let (rec, _) = simulate(&cfg).unwrap();
    let found = detect_movements(&rec, &EnergyConfig::default(), (0.0, 10.0)).unwrap();
    assert!(found.len() <= 1, "{found:?}");
}

#[test]
fn sample_has_the_requested_geometry() {
    let (rec, truth) = simulate(&one_event_config(MovementClass::ArmMove, 2)).unwrap();
    let geometry = SampleGeometry {
        freq_bins: 16,
        time_steps: 40,
    };
    let event = MovementEvent {
        interval: truth.movement_events[0].interval,
        peak_energy: 0.0,
        mean_energy: 0.0,
        label: Some(MovementClass::ArmMove),
    };
    let sample = make_sample(&rec, &event, &geometry).unwrap();
    assert_eq!(sample.tensor.dim(), (4, 16, 40));
    assert_eq!(sample.label, Some(MovementClass::ArmMove));
    let mean = sample.tensor.iter().map(|&v| v as f64).sum::<f64>() / sample.tensor.len() as f64;
    assert!(mean.abs() < 1e-5);

    let edge = MovementEvent {
        interval: [0.0, 0.2],
        ..event
    };
    assert_eq!(make_sample(&rec, &edge, &geometry).unwrap().tensor.dim(), (4, 16, 40));
    let outside = MovementEvent {
        interval: [19.0, 25.0],
        ..edge
    };
    assert!(make_sample(&rec, &outside, &geometry).is_err());
}

fn series(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energy_matches_direct_sum(s_t in series(1..300), w in 1usize..60) {
        let fast = short_term_energy(&s_t, w).unwrap();
        let slow = naive_energy(&s_t, w);
        prop_assert_eq!(fast.len(), s_t.len());
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn delta_is_sum_of_absolute_steps(values in prop::collection::vec(-5.0f64..5.0, 2 * 3 * 9)) {
        let a = Array3::from_shape_vec((2, 3, 9), values).unwrap();
        let s_t = amplitude_delta(a.view()).unwrap();
        prop_assert_eq!(s_t.len(), 8);
        for t in 0..8 {
            let direct: f64 = a.slice(s![.., .., t + 1]).iter().zip(a.slice(s![.., .., t]).iter())
                .map(|(x, y)| (x - y).abs()).sum();
            prop_assert!((s_t[t] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn segments_are_ordered_long_enough_and_above_threshold(
        energy in series(400..900),
        k in 0.5f64..3.0,
        min_event_s in 0.0f64..0.6,
        merge_gap_s in 0.0f64..0.5,
    ) {
        let cfg = EnergyConfig { window_w: 1, threshold_k: k, min_event_s, merge_gap_s };
        let dt = 0.02;
        let threshold = calibrate_threshold(&energy, dt, &cfg, (0.0, 6.0)).unwrap();
        let events = segment_events(&energy, dt, &cfg, (0.0, 6.0)).unwrap();
        for e in &events {
            prop_assert!(e.duration() + 1e-9 >= min_event_s);
            prop_assert!(e.peak_energy > threshold);
            prop_assert!(e.mean_energy <= e.peak_energy);
            let first = (e.interval[0] / dt).round() as usize - 1;
            let last = (e.interval[1] / dt).round() as usize - 1;
            prop_assert!(energy[first] > threshold && energy[last] > threshold);
        }
        for w in events.windows(2) {
            prop_assert!(w[1].interval[0] - w[0].interval[1] >= merge_gap_s - 1e-9);
        }
    }

    #[test]
    fn pooling_blocks_partition_the_subcarriers(k in 1usize..900, f in 1usize..128) {
        let blocks = pooling_blocks(k, f);
        prop_assert_eq!(blocks.len(), f);
        prop_assert!(blocks.iter().all(|b| !b.is_empty()));
        if f <= k {
            prop_assert_eq!(blocks[0].start, 0);
            prop_assert_eq!(blocks[f - 1].end, k);
            for w in blocks.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
        }
    }

    #[test]
    fn pooling_averages_each_block(values in prop::collection::vec(-3.0f64..3.0, 2 * 10 * 4), f in 1usize..10) {
        let x = Array3::from_shape_vec((2, 10, 4), values).unwrap();
        let pooled = pool_subcarriers(x.view(), f);
        for (j, block) in pooling_blocks(10, f).into_iter().enumerate() {
            for c in 0..2 {
                for t in 0..4 {
                    let mean = block.clone().map(|k| x[[c, k, t]]).sum::<f64>() / block.len() as f64;
                    prop_assert!((pooled[[c, j, t]] - mean).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn zscore_centres_and_scales(values in prop::collection::vec(-100.0f64..100.0, 2..200)) {
        let a = ndarray::Array1::from(values);
        let (z, params) = zscore(a.view());
        let n = z.len() as f64;
        let mean = z.sum() / n;
        prop_assert!(mean.abs() <= 1e-9);
        let var = z.iter().map(|v| v * v).sum::<f64>() / n;
        let expected = params.sigma * params.sigma / (params.sigma + params.epsilon).powi(2);
        prop_assert!((var - expected).abs() <= 1e-9);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a0 in 0.0f64..50.0, la in 0.0f64..10.0, b0 in 0.0f64..50.0, lb in 0.0f64..10.0) {
        let (a, b) = ([a0, a0 + la], [b0, b0 + lb]);
        let ab = interval_iou(a, b);
        prop_assert_eq!(ab, interval_iou(b, a));
        prop_assert!((0.0..=1.0).contains(&ab));
        if la > 0.0 {
            prop_assert!((interval_iou(a, a) - 1.0).abs() < 1e-12);
        }
    }
}
