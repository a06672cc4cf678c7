use std::collections::HashSet;
use std::fs;

use manas::data::{
    augment, generate_rain, load_dataset, make_pair, procedural_background, read_png, synthesize_split, write_dataset,
    write_png, Augment, RainConfig,
};
use manas::{MultiToOnePair, Severity, Tensor};
use proptest::prelude::*;

fn mean_rain(gt: &Tensor, s: Severity, seed: u64) -> f64 {
    let r = generate_rain(gt, s, seed, &RainConfig::default()).unwrap();
    r.data().iter().zip(gt.data()).map(|(a, b)| a - b).sum::<f64>() / gt.data().len() as f64
}

#[test]
fn heavier_rain_adds_more_on_mid_gray() {
    let gt = Tensor::full(&[3, 32, 32], 0.5);
    let [l, m, h] = Severity::ALL.map(|s| (0..100).map(|seed| mean_rain(&gt, s, seed)).sum::<f64>() / 100.0);
    assert!(0.0 < l && l < m && m < h, "{l} {m} {h}");
}

#[test]
fn rain_never_darkens() {
    let gt = procedural_background(32, 32, 3);
    for s in Severity::ALL {
        let r = generate_rain(&gt, s, 9, &RainConfig::default()).unwrap();
        assert!(r.data().iter().zip(gt.data()).all(|(a, b)| a >= b));
        assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn rain_is_achromatic_before_clipping() {
    let gt = Tensor::full(&[3, 16, 16], 0.0);
    let r = generate_rain(&gt, Severity::Heavy, 4, &RainConfig::default()).unwrap();
    let plane = 16 * 16;
    for i in 0..plane {
        assert_eq!(r.data()[i], r.data()[plane + i]);
        assert_eq!(r.data()[i], r.data()[2 * plane + i]);
    }
}

#[test]
fn rain_is_deterministic() {
    let gt = procedural_background(24, 24, 1);
    let cfg = RainConfig::default();
    assert_eq!(
        generate_rain(&gt, Severity::Medium, 5, &cfg).unwrap(),
        generate_rain(&gt, Severity::Medium, 5, &cfg).unwrap()
    );
    assert_ne!(
        generate_rain(&gt, Severity::Medium, 5, &cfg).unwrap(),
        generate_rain(&gt, Severity::Medium, 6, &cfg).unwrap()
    );
}

#[test]
fn rain_rejects_out_of_range_input() {
    let gt = Tensor::full(&[3, 8, 8], 1.5);
    assert!(generate_rain(&gt, Severity::Light, 0, &RainConfig::default()).is_err());
}

#[test]
fn pairs_share_one_background_and_every_severity() {
    let gt = procedural_background(32, 32, 2);
    let p = make_pair("x", gt.clone(), 11, &RainConfig::default()).unwrap();
    assert_eq!(p.gt, gt);
    assert_eq!(p.severities, Severity::ALL.to_vec());
    let mse = p.rainy[2].data().iter().zip(p.rainy[0].data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    assert!(mse > 0.0);
}

#[test]
fn pair_rejects_shape_mismatch() {
    let gt = Tensor::zeros(&[3, 8, 8]);
    let bad = vec![gt.clone(), Tensor::zeros(&[3, 8, 4])];
    assert!(MultiToOnePair::new("x", bad, gt, vec![Severity::Light, Severity::Heavy]).is_err());
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let split = synthesize_split((2, 1, 1), 16, 16, 3, &RainConfig::default()).unwrap();
    write_dataset(dir.path(), &split).unwrap();
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!((loaded.train_a.len(), loaded.train_b.len(), loaded.test.len()), (2, 1, 1));
    for (a, b) in split.train_a.iter().zip(&loaded.train_a) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.severities, b.severities);
        // 8-bit quantization.
        let worst = a.gt.data().iter().zip(b.gt.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12);
    }
    loaded.verify_disjoint().unwrap();
}

#[test]
fn orphan_rainy_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let split = synthesize_split((2, 1, 1), 16, 16, 3, &RainConfig::default()).unwrap();
    write_dataset(dir.path(), &split).unwrap();
    write_png(dir.path().join("rain/ghost__light.png"), &split.test[0].gt).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("ghost"), "{err}");
}

#[test]
fn shared_background_across_splits_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut split = synthesize_split((1, 1, 1), 16, 16, 3, &RainConfig::default()).unwrap();
    split.train_b[0].gt = split.train_a[0].gt.clone();
    split.train_b[0].rainy = split.train_a[0].rainy.clone();
    assert!(split.verify_disjoint().is_err());
    let mut ok = synthesize_split((1, 1, 1), 16, 16, 3, &RainConfig::default()).unwrap();
    write_dataset(dir.path(), &ok).unwrap();
    fs::copy(dir.path().join("gt/bg00000.png"), dir.path().join("gt/bg00001.png")).unwrap();
    assert!(load_dataset(dir.path()).is_err());
    ok.train_a.clear();
    assert!(ok.verify_disjoint().is_ok());
}

#[test]
fn png_round_trip_is_exact_on_8_bit_values() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor::from_fn(&[3, 5, 7], |i| (i * 37 % 256) as f64 / 255.0);
    let path = dir.path().join("a.png");
    write_png(&path, &img).unwrap();
    assert_eq!(read_png(&path).unwrap(), img);
}

#[test]
fn synthetic_splits_have_distinct_backgrounds() {
    let split = synthesize_split((6, 6, 4), 16, 16, 1, &RainConfig::default()).unwrap();
    let hashes: HashSet<u64> = split.train_a.iter().chain(&split.train_b).chain(&split.test).map(|p| p.gt_hash()).collect();
    assert_eq!(hashes.len(), 16);
}

fn grid_pair(side: usize) -> MultiToOnePair {
    // Each pixel encodes its own coordinate; rainy images add a per-image offset.
    let gt = Tensor::from_fn(&[3, side, side], |i| (i % (side * side)) as f64 / (side * side) as f64);
    let rainy = (0..3).map(|k| gt.map(|v| v + k as f64)).collect();
    MultiToOnePair::new("grid", rainy, gt, Severity::ALL.to_vec()).unwrap()
}

#[test]
fn augment_rejects_oversized_patches() {
    let pair = make_pair("x", Tensor::full(&[3, 60, 60], 0.5), 0, &RainConfig::default()).unwrap();
    assert!(augment(&pair, 0, 64).is_err());
}

#[test]
fn resize_mode_rescales_the_whole_image() {
    let pair = grid_pair(16);
    let aug = Augment { patch: 8, flip: false, resize_instead_of_crop: true };
    let out = aug.apply(&pair, 0).unwrap();
    assert_eq!(out.gt.dims(), &[3, 8, 8]);
    assert!(out.rainy.iter().all(|r| r.dims() == [3, 8, 8]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn crops_are_shared_across_the_pair(seed in any::<u64>(), patch in 1usize..=16) {
        let pair = grid_pair(16);
        let out = augment(&pair, seed, patch).unwrap();
        prop_assert_eq!(out.gt.dims(), &[3, patch, patch]);
        for (k, r) in out.rainy.iter().enumerate() {
            prop_assert_eq!(r, &out.gt.map(|v| v + k as f64));
        }
    }

    #[test]
    fn augment_is_a_pure_function_of_the_seed(seed in any::<u64>()) {
        let pair = grid_pair(12);
        prop_assert_eq!(augment(&pair, seed, 8).unwrap(), augment(&pair, seed, 8).unwrap());
    }

    #[test]
    fn flipping_twice_restores_the_image(seed in any::<u64>()) {
        let pair = grid_pair(8);
        let aug = Augment { patch: 0, flip: true, resize_instead_of_crop: false };
        let once = aug.apply(&pair, seed).unwrap();
        prop_assert_eq!(aug.apply(&once, seed).unwrap(), pair);
    }
}
