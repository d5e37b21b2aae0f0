use std::fs;
use std::path::{Path, PathBuf};

use glocal_core::tasks::{
    gaussian_classes, holdout_split, imbalance_counts, imbalance_subsample, load_idx, DataError,
};
use proptest::prelude::*;

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 3];
    for v in [n, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 1];
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (PathBuf, PathBuf) {
    let (i, l) = (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"));
    fs::write(&i, images).unwrap();
    fs::write(&l, labels).unwrap();
    (i, l)
}

#[test]
fn idx_fixture_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 2 * 2).map(|v| (v * 20) as u8).collect();
    let (i, l) = write_pair(dir.path(), &idx_images(3, 2, 2, &pixels), &idx_labels(&[2, 0, 1]));
    let ds = load_idx(&i, &l, None).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.dim(), 4);
    assert_eq!(ds.labels(), &[2, 0, 1]);
    assert_eq!(ds.class_count(), 3);
    assert_eq!(ds.row(1), &[80.0 / 255.0, 100.0 / 255.0, 120.0 / 255.0, 140.0 / 255.0]);

    let first = load_idx(&i, &l, Some(2)).unwrap();
    assert_eq!(first.len(), 2);
    assert_eq!(first.row(1), ds.row(1));
}

#[test]
fn idx_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut images = idx_images(1, 1, 1, &[7]);
    images[3] = 9;
    let (i, l) = write_pair(dir.path(), &images, &idx_labels(&[0]));
    match load_idx(&i, &l, None) {
        Err(DataError::BadMagic { path, found, .. }) => {
            assert_eq!(path, i);
            assert_eq!(found, 0x0809);
        }
        other => panic!("expected bad magic, got {other:?}"),
    }

    let (i, l) = write_pair(dir.path(), &idx_images(2, 1, 1, &[7]), &idx_labels(&[0, 1]));
    assert!(matches!(load_idx(&i, &l, None), Err(DataError::Truncated { .. })));

    let (i, l) = write_pair(dir.path(), &idx_images(1, 1, 1, &[7]), &idx_labels(&[0, 1]));
    assert!(matches!(load_idx(&i, &l, None), Err(DataError::CountMismatch { images: 1, labels: 2 })));

    let missing = dir.path().join("absent");
    let err = load_idx(&missing, &l, None).unwrap_err();
    assert_eq!(err.to_string(), format!("dataset not found: {}", missing.display()));
}

#[test]
fn mnist_files_have_expected_counts() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let train = (root.join("train-images-idx3-ubyte"), root.join("train-labels-idx1-ubyte"));
    if !train.0.exists() {
        eprintln!("MNIST not present under {}; skipping", root.display());
        return;
    }
    let ds = load_idx(&train.0, &train.1, None).unwrap();
    assert_eq!((ds.len(), ds.dim(), ds.class_count()), (60_000, 784, 10));
    let test = load_idx(
        &root.join("t10k-images-idx3-ubyte"),
        &root.join("t10k-labels-idx1-ubyte"),
        None,
    )
    .unwrap();
    assert_eq!(test.len(), 10_000);
}

#[test]
fn imbalance_matches_closed_form() {
    let counts = imbalance_counts(&[5000; 10], 50.0, 10);
    assert_eq!(counts[0], 5000);
    assert_eq!(counts[9], 147);
    assert_eq!(counts[5], (5000.0 * 50f64.powf(-0.5)).floor() as usize);
    assert_eq!(imbalance_counts(&[100, 100], 4.0, 1), vec![100, 25]);
}

#[test]
fn imbalance_guards() {
    let ds = gaussian_classes(&[10, 10], 2, 2.0, 1.0, 0).unwrap();
    assert!(matches!(imbalance_subsample(&ds, 0.5, None, 0), Err(DataError::BadFactor(_))));
    assert!(matches!(
        imbalance_subsample(&ds, 1000.0, Some(1), 0),
        Err(DataError::ClassEmptied { class: 1, .. })
    ));
}

proptest! {
    #[test]
    fn imbalance_subsample_hits_counts(
        per_class in prop::collection::vec(5usize..40, 2..5),
        factor in 1.0f64..20.0,
        seed in any::<u64>(),
    ) {
        let ds = gaussian_classes(&per_class, 3, 2.0, 1.0, seed).unwrap();
        let want = imbalance_counts(&per_class, factor, per_class.len());
        prop_assume!(want.iter().all(|&n| n > 0));
        let sub = imbalance_subsample(&ds, factor, None, seed).unwrap();
        prop_assert_eq!(sub.class_counts(), want.clone());
        prop_assert!(want.iter().zip(&per_class).all(|(w, n)| w <= n));
    }

    #[test]
    fn holdout_split_partitions(n in 4usize..60, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let ds = gaussian_classes(&[n / 2, n - n / 2], 2, 2.0, 1.0, seed).unwrap();
        let n_val = (n as f64 * frac).round() as usize;
        prop_assume!(n_val > 0 && n_val < n);
        let (train, val) = holdout_split(&ds, frac, seed).unwrap();
        prop_assert_eq!(val.len(), n_val);
        prop_assert_eq!(train.len() + val.len(), n);
        let mut rows: Vec<Vec<u64>> = train
            .inputs()
            .chunks(2)
            .chain(val.inputs().chunks(2))
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut all: Vec<Vec<u64>> = ds.inputs().chunks(2).map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        rows.sort();
        all.sort();
        prop_assert_eq!(rows, all);
    }
}
