//! Aggregation, self-K and registry invariants, and the CSR check for the
//! self-K estimator.

use std::f64::consts::PI;

use morphoml_core::aggregate::{aggregate_patch, ripley_self_k, FeatureRegistry, CONFIGURATIONS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_ignores_row_order(rows in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 3), 1..30), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a, _) = aggregate_patch(&rows, 3);
        let (b, _) = aggregate_patch(&shuffled, 3);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn self_k_is_monotone_and_translation_invariant(
        points in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 2..60),
        dx in -50.0f64..50.0,
        dy in -50.0f64..50.0,
    ) {
        let radii: Vec<f64> = (1..=10).map(|i| 5.0 * f64::from(i)).collect();
        let (k, _) = ripley_self_k(&points, &radii, 10_000.0).unwrap();
        prop_assert!(k.k_values.windows(2).all(|w| w[0] <= w[1]));
        // Shift by whole pixels so squared distances stay bit-identical.
        let (dx, dy) = (dx.round(), dy.round());
        let moved: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        let (k2, _) = ripley_self_k(&moved, &radii, 10_000.0).unwrap();
        for (a, b) in k.k_values.iter().zip(&k2.k_values) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}

#[test]
fn registry_lengths_are_block_sums() {
    for (name, blocks) in CONFIGURATIONS {
        let r = FeatureRegistry::configuration(name).unwrap();
        let expected: usize = blocks
            .iter()
            .map(|b| if b.is_per_object() { 5 * b.base_names().len() } else { r.ct_radii.len() })
            .sum();
        assert_eq!(r.len(), expected, "{name}");
    }
}

#[test]
fn registry_hash_detects_column_changes() {
    let mut seen = std::collections::BTreeMap::new();
    for (name, _) in CONFIGURATIONS {
        let r = FeatureRegistry::configuration(name).unwrap();
        if let Some(other) = seen.insert(r.hash(), r.columns.clone()) {
            assert_eq!(other, r.columns, "hash collision for {name}");
        }
    }
    let r = FeatureRegistry::configuration("NuclearMorphological").unwrap();
    let mut renamed = r.clone();
    renamed.columns[0].name.push('x');
    assert_ne!(r.hash(), renamed.hash());
    let mut retyped = r.clone();
    retyped.columns[3].categorical = true;
    assert_ne!(r.hash(), retyped.hash());
}

/// Mean estimate over 200 uniform point sets in the unit square against πr².
/// Without edge correction the estimator is biased low by about
/// `4r/(3π)`·(perimeter/area) relative, i.e. ~4% at r = 0.05.
#[test]
fn self_k_under_complete_spatial_randomness() {
    let radii = [0.05, 0.1];
    let mut sums = [0.0; 2];
    for s in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let pts: Vec<(f64, f64)> = (0..200).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
        let (k, _) = ripley_self_k(&pts, &radii, 1.0).unwrap();
        sums[0] += k.k_values[0];
        sums[1] += k.k_values[1];
    }
    for (r, sum) in radii.iter().zip(sums) {
        let mean = sum / 200.0;
        let expected = PI * r * r;
        assert!((mean / expected - 1.0).abs() < 0.10, "r={r}: {mean} vs {expected}");
    }
}
