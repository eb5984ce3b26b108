//! Focal-loss derivatives against finite differences, and training
//! invariants of the boosted ensemble.

use morphoml_core::gbdt::{focal_loss, softmax, train, GbdtModel, GbdtParams, TrainingData};
use morphoml_core::{Executor, Sequential};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Splits the index range over `threads` scoped threads.
struct Threaded(usize);

impl Executor for Threaded {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let chunk = n.div_ceil(self.0).max(1);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| {
                    let f = &f;
                    s.spawn(move || (start..(start + chunk).min(n)).map(f).collect::<Vec<T>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
        })
    }
}

fn loss_at(z: &[f64], label: usize, gamma: f64, w: &[f64]) -> f64 {
    focal_loss(&softmax(z), label, gamma, w).loss
}

fn grad_fd(z: &[f64], label: usize, gamma: f64, w: &[f64], c: usize, h: f64) -> f64 {
    let mut zp = z.to_vec();
    let mut zm = z.to_vec();
    zp[c] += h;
    zm[c] -= h;
    (loss_at(&zp, label, gamma, w) - loss_at(&zm, label, gamma, w)) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn focal_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for gamma in [0.0, 0.5, 2.0] {
        for _ in 0..150 {
            let z: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..3.0)).collect();
            let label = rng.random_range(0..5);
            let t = focal_loss(&softmax(&z), label, gamma, &w);
            for c in 0..5 {
                worst = worst.max(rel_err(t.gradient[c], grad_fd(&z, label, gamma, &w, c, h)));
                // Second derivative as a difference of analytic gradients.
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[c] += h;
                zm[c] -= h;
                let gp = focal_loss(&softmax(&zp), label, gamma, &w).gradient[c];
                let gm = focal_loss(&softmax(&zm), label, gamma, &w).gradient[c];
                worst = worst.max(rel_err(t.hessian[c], (gp - gm) / (2.0 * h)));
            }
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn zero_gamma_is_weighted_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-4.0..4.0)).collect();
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..3.0)).collect();
        let label = rng.random_range(0..5);
        let p = softmax(&z);
        let t = focal_loss(&p, label, 0.0, &w);
        assert!((t.loss - (-w[label] * p[label].ln())).abs() < 1e-12);
    }
}

fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    while x.len() < n {
        let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let s: f64 = 0.8 * a + 0.6 * b;
        if s.abs() < 0.05 {
            continue;
        }
        x.push(vec![a, b]);
        y.push(usize::from(s > 0.0));
    }
    (x, y)
}

fn fit<E: Executor>(exec: &E, x: &[Vec<f64>], y: &[usize], k: usize, params: &GbdtParams) -> GbdtModel {
    let mask = vec![false; x[0].len()];
    train(exec, TrainingData { features: x, labels: y, categorical: &mask, n_classes: k, schema_hash: "h" }, params).unwrap()
}

#[test]
fn fits_separable_points_and_is_thread_invariant() {
    let (x, y) = separable(200, 1);
    let params = GbdtParams { num_rounds: 50, min_samples_leaf: 1, ..Default::default() };
    let m1 = fit(&Sequential, &x, &y, 2, &params);
    let acc = x.iter().zip(&y).filter(|(xi, &yi)| m1.predict_class(xi) == yi).count();
    assert_eq!(acc, 200);
    let m2 = fit(&Sequential, &x, &y, 2, &params);
    let m4 = fit(&Threaded(4), &x, &y, 2, &params);
    assert_eq!(format!("{m1:?}"), format!("{m2:?}"));
    assert_eq!(format!("{m1:?}"), format!("{m4:?}"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loss_never_increases_and_probabilities_sum_to_one(seed in any::<u64>(), k in 2usize..5, gamma in prop::sample::select(vec![0.0, 0.5, 2.0])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..80).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<usize> = (0..80).map(|_| rng.random_range(0..k)).collect();
        let params = GbdtParams { num_rounds: 15, gamma, min_samples_leaf: 2, ..Default::default() };
        let m = fit(&Sequential, &x, &y, k, &params);
        prop_assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        for _ in 0..20 {
            let probe: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s: f64 = m.predict_proba(&probe).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
