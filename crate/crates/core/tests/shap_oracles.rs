//! Tree-Shapley values against exhaustive subset enumeration.

use morphoml_core::attribution::{expected_value, group_attribution, tree_shap, tree_shap_single, FeatureGrouping};
use morphoml_core::gbdt::{train, GbdtModel, GbdtParams, Node, SplitRule, Tree, TrainingData};
use morphoml_core::Sequential;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random tree of depth ≤ `depth` over `m` features with consistent covers.
fn random_tree(rng: &mut ChaCha8Rng, m: usize, depth: usize) -> Tree {
    fn grow(rng: &mut ChaCha8Rng, nodes: &mut Vec<Node>, m: usize, depth: usize, cover: f64) -> usize {
        let idx = nodes.len();
        if depth == 0 || cover < 2.0 || rng.random_bool(0.2) {
            nodes.push(Node::Leaf { value: rng.random_range(-2.0..2.0), cover });
            return idx;
        }
        nodes.push(Node::Leaf { value: 0.0, cover });
        let left_cover = rng.random_range(1..cover as u32) as f64;
        let feature = rng.random_range(0..m);
        let threshold = rng.random_range(0.0..1.0);
        let left = grow(rng, nodes, m, depth - 1, left_cover);
        let right = grow(rng, nodes, m, depth - 1, cover - left_cover);
        nodes[idx] = Node::Split { feature, rule: SplitRule::Threshold(threshold), left, right, cover, gain: 1.0 };
        idx
    }
    let mut nodes = Vec::new();
    let cover = rng.random_range(20..200) as f64;
    grow(rng, &mut nodes, m, depth, cover);
    Tree { nodes }
}

fn cond_exp(tree: &Tree, i: usize, x: &[f64], mask: u32) -> f64 {
    match &tree.nodes[i] {
        Node::Leaf { value, .. } => *value,
        Node::Split { feature, rule, left, right, cover, .. } => {
            if mask & (1 << feature) != 0 {
                cond_exp(tree, if rule.goes_left(x[*feature]) { *left } else { *right }, x, mask)
            } else {
                (tree.nodes[*left].cover() * cond_exp(tree, *left, x, mask)
                    + tree.nodes[*right].cover() * cond_exp(tree, *right, x, mask))
                    / cover
            }
        }
    }
}

/// Shapley values of the set function `S ↦ E[f(x) | x_S]` by enumeration.
fn enumerate(tree: &Tree, x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let fact = |n: usize| (1..=n).product::<usize>() as f64;
    (0..m)
        .map(|i| {
            (0u32..1 << m)
                .filter(|s| s & (1 << i) == 0)
                .map(|s| {
                    let k = s.count_ones() as usize;
                    fact(k) * fact(m - k - 1) / fact(m) * (cond_exp(tree, 0, x, s | 1 << i) - cond_exp(tree, 0, x, s))
                })
                .sum()
        })
        .collect()
}

#[test]
fn random_trees_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..40 {
        let m = rng.random_range(1..=4);
        let tree = random_tree(&mut rng, m, 3);
        for _ in 0..5 {
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut phi = vec![0.0; m];
            tree_shap_single(&tree, &x, &mut phi);
            for (a, b) in phi.iter().zip(enumerate(&tree, &x)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-9, "worst abs error {worst}");
}

#[test]
fn duplicated_columns_share_credit_and_unused_features_get_none() {
    // Features 0 and 1 always agree; the tree splits on each symmetrically.
    let leaf = |value, cover| Node::Leaf { value, cover };
    let split = |feature, left, right, cover| Node::Split {
        feature,
        rule: SplitRule::Threshold(0.5),
        left,
        right,
        cover,
        gain: 1.0,
    };
    let a = Tree { nodes: vec![split(0, 1, 2, 10.0), leaf(1.0, 4.0), leaf(3.0, 6.0)] };
    let b = Tree { nodes: vec![split(1, 1, 2, 10.0), leaf(1.0, 4.0), leaf(3.0, 6.0)] };
    for x in [[0.0, 0.0, 9.0], [1.0, 1.0, -9.0]] {
        let mut phi = vec![0.0; 3];
        tree_shap_single(&a, &x, &mut phi);
        tree_shap_single(&b, &x, &mut phi);
        assert!((phi[0] - phi[1]).abs() < 1e-9);
        assert_eq!(phi[2], 0.0);
    }
}

fn trained(seed: u64) -> (GbdtModel, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..120).map(|_| (0..4).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let y: Vec<usize> = x.iter().map(|r| usize::from(r[0] + 0.5 * r[1] > 0.8) + usize::from(r[2] > 0.7)).collect();
    let mask = [false; 4];
    let data = TrainingData { features: &x, labels: &y, categorical: &mask, n_classes: 3, schema_hash: "" };
    let params = GbdtParams { num_rounds: 20, max_depth: 3, min_samples_leaf: 2, ..Default::default() };
    (train(&Sequential, data, &params).unwrap(), x)
}

#[test]
fn ensemble_local_accuracy_and_additivity() {
    let (model, x) = trained(5);
    let mut doubled = model.clone();
    for trees in &mut doubled.trees {
        let copy = trees.clone();
        trees.extend(copy);
    }
    for row in &x {
        let r = tree_shap(&model, row).unwrap();
        assert!(r.local_accuracy_error() < 1e-6);
        let d = tree_shap(&doubled, row).unwrap();
        for (p, q) in r.values.iter().flatten().zip(d.values.iter().flatten()) {
            assert!((2.0 * p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn group_sums_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tree = random_tree(&mut rng, 3, 2);
    let x = [0.3, 0.6, 0.9];
    let oracle = enumerate(&tree, &x);
    let model = GbdtModel {
        n_classes: 1,
        n_features: 3,
        schema_hash: String::new(),
        params: GbdtParams::default(),
        class_weights: vec![1.0],
        base_scores: vec![0.0],
        trees: vec![vec![tree.clone()]],
        loss_history: vec![],
    };
    let report = tree_shap(&model, &x).unwrap();
    let grouping = FeatureGrouping { groups: vec![("a".into(), vec![0, 2]), ("b".into(), vec![1])] };
    let g = group_attribution(&report, &grouping).unwrap();
    assert!((g[0][0] - (oracle[0] + oracle[2])).abs() < 1e-9);
    assert!((g[0][1] - oracle[1]).abs() < 1e-9);
    let all = FeatureGrouping { groups: vec![("all".into(), vec![0, 1, 2])] };
    let g = group_attribution(&report, &all).unwrap();
    assert!((g[0][0] - (tree.predict(&x) - expected_value(&tree))).abs() < 1e-9);
}
