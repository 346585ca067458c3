use std::fs;

use fedtrade_core::numerics::ks_distance;
use fedtrade_core::synthdata::{
    load_federation, make_federation, persist_federation, split_indices, split_sizes, Federation, FederationSpec, Targets,
    Task, MANIFEST_FILE,
};
use fedtrade_core::FedError;

fn spec(task: Task, samples: Vec<usize>, delta_style: f64, delta_content: f64) -> FederationSpec {
    FederationSpec {
        task,
        samples_per_client: samples,
        test_counts: None,
        height: 12,
        width: 12,
        channels: 1,
        classes: 2,
        delta_style,
        delta_content,
        master_seed: 5,
    }
}

#[test]
fn split_arithmetic_follows_table_sizes() {
    assert_eq!(split_sizes(1000, 100), (100, 765, 135));
    let totals = [1000, 196, 380, 612];
    let tests: Vec<usize> = totals.iter().map(|n| n / 10).collect();
    assert_eq!(tests, vec![100, 19, 38, 61]);
    // the published colon test counts are given explicitly
    let published = [100, 19, 38, 60];
    let train: Vec<usize> = totals.iter().zip(published).map(|(&n, t)| split_sizes(n, t).1).collect();
    assert_eq!(train, vec![765, 150, 290, 469]);
    let p0 = 765.0 / train.iter().sum::<usize>() as f64;
    assert!((p0 - 0.457).abs() < 1e-3);
}

#[test]
fn explicit_test_counts_drive_the_weights() {
    let mut s = spec(Task::Classification, vec![1000, 196, 380, 612], 0.0, 0.0);
    s.height = 4;
    s.width = 4;
    s.test_counts = Some(vec![100, 19, 38, 60]);
    let fed = make_federation(&s).unwrap();
    let train: Vec<usize> = fed.clients.iter().map(|c| c.train.len()).collect();
    assert_eq!(train, vec![765, 150, 290, 469]);
    let w = fed.weights();
    assert!((w[0] - 765.0 / 1674.0).abs() < 1e-15);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn generation_is_deterministic() {
    let s = spec(Task::Segmentation, vec![20, 30, 25, 15], 0.7, 0.4);
    assert_eq!(make_federation(&s).unwrap(), make_federation(&s).unwrap());
}

#[test]
fn test_split_ignores_shift_dials() {
    let base = make_federation(&spec(Task::Classification, vec![50, 60, 70, 80], 0.0, 0.0)).unwrap();
    for (ds, dc) in [(1.0, 0.0), (0.0, 1.0), (0.3, 0.8)] {
        let other = make_federation(&spec(Task::Classification, vec![50, 60, 70, 80], ds, dc)).unwrap();
        for (a, b) in base.clients.iter().zip(&other.clients) {
            assert_eq!(a.test, b.test);
            assert_eq!(a.train, b.train);
        }
    }
    let (test, train, val) = split_indices(5, 2, 70, 7);
    let mut all: Vec<usize> = test.iter().chain(&train).chain(&val).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..70).collect::<Vec<_>>());
}

fn mask_areas(fed: &Federation, k: usize) -> Vec<f64> {
    match &fed.clients[k].targets {
        Targets::Masks(m) => {
            let plane = m.shape()[1] * m.shape()[2];
            m.data().chunks(plane).map(|c| c.iter().sum::<f64>()).collect()
        }
        Targets::Labels(_) => panic!("segmentation expected"),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn lesion_areas_follow_content_shift() {
    let n = 500;
    let iid = make_federation(&spec(Task::Segmentation, vec![n; 4], 0.0, 0.0)).unwrap();
    // two-sample Kolmogorov-Smirnov at alpha = 0.01: c(alpha) = 1.628
    let critical = 1.628 * (2.0 / n as f64).sqrt();
    let d = ks_distance(&mask_areas(&iid, 0), &mask_areas(&iid, 3));
    assert!(d < critical, "KS distance {d} >= {critical}");

    let shifted = make_federation(&spec(Task::Segmentation, vec![n; 4], 0.0, 1.0)).unwrap();
    let (a0, a3) = (mean(&mask_areas(&shifted, 0)), mean(&mask_areas(&shifted, 3)));
    let ratio = a0.max(a3) / a0.min(a3);
    assert!(ratio >= 2.0, "area ratio {ratio}");
}

#[test]
fn content_shift_skews_class_priors_and_style_shift_does_not() {
    let n = 600;
    let histogram = |fed: &Federation, k: usize| -> f64 {
        match &fed.clients[k].targets {
            Targets::Labels(l) => l.iter().filter(|&&y| y == 1).count() as f64 / l.len() as f64,
            Targets::Masks(_) => unreachable!(),
        }
    };
    let style_only = make_federation(&spec(Task::Classification, vec![n; 4], 1.0, 0.0)).unwrap();
    for k in 0..4 {
        // binomial sd at n = 600 is 0.02
        assert!((histogram(&style_only, k) - 0.5).abs() < 0.08);
    }
    let content = make_federation(&spec(Task::Classification, vec![n; 4], 0.0, 1.0)).unwrap();
    let priors: Vec<&Vec<f64>> = content.profile.content.iter().map(|c| &c.class_prior).collect();
    assert_ne!(priors[0], priors[3]);
    assert!((histogram(&content, 0) - histogram(&content, 3)).abs() > 0.3);
}

#[test]
fn persist_and_load_round_trip() {
    let fed = make_federation(&spec(Task::Segmentation, vec![12, 15, 10, 11], 0.5, 0.5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    persist_federation(&fed, dir.path()).unwrap();
    assert_eq!(load_federation(dir.path()).unwrap(), fed);
}

fn corrupt_field(edit: impl Fn(&mut serde_json::Value)) -> FedError {
    let fed = make_federation(&spec(Task::Classification, vec![10, 12], 0.2, 0.2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    persist_federation(&fed, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    edit(&mut v);
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    load_federation(dir.path()).unwrap_err()
}

#[test]
fn corrupt_manifest_names_the_field() {
    let cases: Vec<(Box<dyn Fn(&mut serde_json::Value)>, &str)> = vec![
        (Box::new(|v| v["format_version"] = 99.into()), "format_version"),
        (Box::new(|v| v["master_seed"] = 12345.into()), "master_seed"),
        (Box::new(|v| v["clients"][1]["train"] = "oops".into()), "train"),
        (Box::new(|v| v["spec"]["delta_style"] = "high".into()), "delta_style"),
    ];
    for (edit, field) in cases {
        match corrupt_field(edit) {
            FedError::Manifest { field: f, .. } => assert!(f.contains(field), "{f} does not name {field}"),
            other => panic!("expected manifest error for {field}, got {other}"),
        }
    }
}

#[test]
fn spec_validation_rejects_out_of_range_dials() {
    let mut s = spec(Task::Classification, vec![10; 4], 1.5, 0.0);
    assert!(make_federation(&s).is_err());
    s.delta_style = 0.5;
    s.classes = 3;
    s.task = Task::Segmentation;
    assert!(make_federation(&s).is_err());
}
