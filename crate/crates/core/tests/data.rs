use std::io::Write as _;

use aecz_core::data::*;
use aecz_core::{Error, Tensor};
use proptest::prelude::*;

fn write_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

fn series(t: usize, c: usize, values: Vec<f32>) -> LabeledSeries {
    let names = (0..c).map(|i| format!("c{i}")).collect();
    LabeledSeries::new(Tensor::new(vec![t, c], values).unwrap(), vec![0; t], names, Split::Test).unwrap()
}

#[test]
fn csv_with_labels() {
    let f = write_file("a,b,label\n1,2,0\n3,4,1\n5,6,0\n");
    let s = load_csv(f.path(), Some("label"), Split::Test).unwrap();
    assert_eq!((s.len(), s.channels()), (3, 2));
    assert_eq!(s.labels, vec![0, 1, 0]);
    assert_eq!(s.channel_names, vec!["a", "b"]);
    assert_eq!(s.values.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn csv_without_label_column() {
    let f = write_file("a,b\n1,2\n3,4\n");
    for label in [None, Some("label"), Some("anomaly")] {
        let s = load_csv(f.path(), label, Split::Train).unwrap();
        assert_eq!(s.labels, vec![0, 0]);
        assert_eq!(s.channels(), 2);
    }
}

#[test]
fn csv_errors_cite_position() {
    let f = write_file("a,b\n1,2\n1,2\n1,2\n1,2\n1,abc\n");
    match load_csv(f.path(), None, Split::Test) {
        Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (5, 2)),
        other => panic!("expected parse error, got {other:?}"),
    }
    let f = write_file("a,b\n1,2\n3\n");
    assert!(matches!(load_csv(f.path(), None, Split::Test), Err(Error::Parse { row: 2, .. })));
}

#[test]
fn csv_round_trip() {
    let cfg = SynthConfig {
        length: 2000,
        ..SynthConfig::default()
    };
    let s = generate_synthetic(&cfg).unwrap().test;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("test.csv");
    write_csv(&s, &path).unwrap();
    assert_eq!(load_csv(&path, Some("label"), Split::Test).unwrap(), s);
}

#[test]
fn normalization_examples() {
    let train = series(2, 2, vec![2.0, 5.0, 4.0, 5.0]);
    let test = series(2, 2, vec![3.0, 5.0, 6.0, 7.0]);
    let out = normalize(&test, &train).unwrap();
    assert_eq!(out.values.data(), &[0.5, 0.0, 2.0, 0.0]);
}

#[test]
fn default_generator_anomaly_rate() {
    let s = generate_synthetic(&SynthConfig::default()).unwrap();
    let rate = s.test.anomaly_rate();
    assert!((0.02..=0.15).contains(&rate), "rate {rate}");
    assert!(s.train.labels.iter().all(|&l| l == 0));
    assert_eq!(s.train.channels(), 8);
    assert_eq!(s.train.len() + s.val.len() + s.test.len(), 6000);
}

#[test]
fn generator_is_deterministic_and_seed_sensitive() {
    let cfg = SynthConfig {
        length: 1000,
        ..SynthConfig::default()
    };
    assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    let other = SynthConfig { seed: 8, ..cfg.clone() };
    assert_ne!(generate_synthetic(&cfg).unwrap().test, generate_synthetic(&other).unwrap().test);
}

#[test]
fn no_anomalies_means_clean_labels() {
    let cfg = SynthConfig {
        length: 1000,
        test_anomalies: AnomalySpec::none(),
        val_anomalies: AnomalySpec::none(),
        ..SynthConfig::default()
    };
    let s = generate_synthetic(&cfg).unwrap();
    assert!(s.test.labels.iter().all(|&l| l == 0));
}

#[test]
fn oversized_anomalies_are_rejected() {
    let cfg = SynthConfig {
        length: 200,
        ..SynthConfig::default()
    };
    assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn windows_cover_every_timestep(t in 1usize..60, w in 1usize..20, stride in 1usize..20) {
        prop_assume!(w <= t && stride <= w);
        let s = series(t, 1, (0..t).map(|i| i as f32).collect());
        let cfg = WindowConfig { length: w, stride, normalization: Normalization::None };
        let win = window(&s, &cfg).unwrap();
        prop_assert_eq!(win.starts.len(), (t - w) / stride + 1);
        let mut covered = vec![false; t];
        for (k, &start) in win.starts.iter().enumerate() {
            for step in 0..w {
                prop_assert_eq!(win.data.data()[k * w + step], (start + step) as f32);
                covered[start + step] = true;
            }
        }
        // the tail past the last full window is only reachable when it fits
        let last = win.starts.last().unwrap() + w;
        prop_assert!(covered[..last].iter().all(|&c| c));
    }

    #[test]
    fn normalization_is_invertible(values in prop::collection::vec(-100.0f32..100.0, 2..40)) {
        let t = values.len() / 2;
        let s = series(t, 2, values[..2 * t].to_vec());
        let stats = MinMaxStats::fit(&s);
        let normed = stats.apply(&s).unwrap();
        prop_assert!(normed.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let back = stats.invert(&normed);
        for (j, (a, b)) in back.values.data().iter().zip(s.values.data()).enumerate() {
            let ch = j % 2;
            if stats.max[ch] > stats.min[ch] {
                prop_assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{} vs {}", a, b);
            }
        }
    }
}
