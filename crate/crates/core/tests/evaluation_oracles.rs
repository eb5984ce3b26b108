//! Bootstrap intervals and paired decisions against closed forms and
//! simulation.

use morphoml_core::evaluation::{
    bootstrap_ci, paired_test_and_tost, weighted_metric, Metric, PredictionRow, PredictionSet,
};
use morphoml_core::Sequential;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn binary_set(correct: &[bool]) -> PredictionSet {
    let rows = correct
        .iter()
        .enumerate()
        .map(|(i, &ok)| {
            let truth = i % 2;
            let predicted = if ok { truth } else { 1 - truth };
            let mut p = vec![0.3; 2];
            p[predicted] = 0.7;
            PredictionRow { case_id: format!("c{i}"), truth, predicted, probabilities: Some(p) }
        })
        .collect();
    PredictionSet::new(vec!["A".into(), "B".into()], rows).unwrap()
}

#[test]
fn bootstrap_width_matches_binomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let correct: Vec<bool> = (0..200).map(|_| rng.random_bool(0.8)).collect();
    let set = binary_set(&correct);
    let p = weighted_metric(&set, Metric::Accuracy).unwrap();
    let ci = bootstrap_ci(&Sequential, &set, Metric::Accuracy, 1000, 1).unwrap();
    assert_eq!(ci.point, p);
    let analytic = 2.0 * 1.96 * (0.8f64 * 0.2 / 200.0).sqrt();
    let width = ci.hi - ci.lo;
    assert!((width / analytic - 1.0).abs() < 0.25, "width {width} vs {analytic}");
}

#[test]
fn relabelling_classes_preserves_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = 4;
    let rows: Vec<PredictionRow> = (0..60)
        .map(|i| {
            let truth = rng.random_range(0..k);
            let predicted = if rng.random_bool(0.6) { truth } else { rng.random_range(0..k) };
            let mut p: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            PredictionRow { case_id: format!("c{i}"), truth, predicted, probabilities: Some(p) }
        })
        .collect();
    let names: Vec<String> = (0..k).map(|c| format!("K{c}")).collect();
    let perm = [2, 0, 3, 1];
    let permuted_rows = rows
        .iter()
        .map(|r| {
            let mut p = vec![0.0; k];
            for c in 0..k {
                p[perm[c]] = r.probabilities.as_ref().unwrap()[c];
            }
            PredictionRow { case_id: r.case_id.clone(), truth: perm[r.truth], predicted: perm[r.predicted], probabilities: Some(p) }
        })
        .collect();
    let mut permuted_names = names.clone();
    for c in 0..k {
        permuted_names[perm[c]] = names[c].clone();
    }
    let a = PredictionSet::new(names, rows).unwrap();
    let b = PredictionSet::new(permuted_names, permuted_rows).unwrap();
    for m in Metric::ALL {
        let (x, y) = (weighted_metric(&a, m).unwrap(), weighted_metric(&b, m).unwrap());
        assert!((x - y).abs() < 1e-12, "{m}: {x} vs {y}");
    }
}

#[test]
fn clear_gap_is_significant() {
    // 90% against 78% correct over 200 cases: difference 0.12.
    let a: Vec<bool> = (0..200).map(|i| i % 10 != 0).collect();
    let b: Vec<bool> = (0..200).map(|i| i % 10 != 0 && i % 25 != 1 && i % 25 != 7 && i % 25 != 13).collect();
    let c = paired_test_and_tost(&Sequential, &binary_set(&a), &binary_set(&b), 0.05, 1000, 2).unwrap();
    assert!((c.difference - 0.12).abs() < 0.01, "difference {}", c.difference);
    assert!(c.ci95.0 > 0.0 && c.significant);
    assert_eq!(c.conclusion, "Significant Difference; Non-inferior");
}

#[test]
fn small_true_difference_is_declared_equivalent() {
    let mut equivalent = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        // Paired correctness: b agrees with a except on ~2% of cases, a 1-point net gap.
        let a: Vec<bool> = (0..500).map(|_| rng.random_bool(0.8)).collect();
        let b: Vec<bool> = a
            .iter()
            .map(|&ok| {
                let u: f64 = rng.random_range(0.0..1.0);
                if ok && u < 0.03 {
                    false
                } else if !ok && u < 0.07 {
                    true
                } else {
                    ok
                }
            })
            .collect();
        let c = paired_test_and_tost(&Sequential, &binary_set(&b), &binary_set(&a), 0.05, 1000, seed).unwrap();
        equivalent += usize::from(c.equivalent);
    }
    assert!(equivalent as f64 / 50.0 > 0.9, "{equivalent}/50 equivalent");
}
