mod common;

use common::{brute_best_split, brute_greedy_tree, random_integer_dataset, rss};
use poroforest::cart::{best_split, cost_complexity_path, fit_tree, fit_tree_all_features, prune};
use poroforest::{FeatureKind, RegressionTree, Samples, SplitRule, TreeParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

#[test]
fn split_matches_exhaustive_search_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let n = rng.random_range(2..=12);
        let p = rng.random_range(1..=3);
        let min_leaf = rng.random_range(1..=3);
        let s = random_integer_dataset(&mut rng, n, p);
        let feats = all(p);
        let got = best_split(&s, &all(n), &feats, min_leaf).unwrap();
        let want = brute_best_split(&s, &all(n), &feats, min_leaf);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                assert_eq!(g.feature, w.feature);
                assert_eq!(g.rule, w.rule);
                assert!((g.rss - w.rss).abs() < 1e-9);
            }
            (g, w) => panic!("library {g:?} vs oracle {w:?}"),
        }
    }
}

#[test]
fn categorical_split_matches_all_partitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.random_range(4..=14);
        let levels = rng.random_range(2..=5u32);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(0..levels) as f64, rng.random::<f64>()])
            .collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let kinds = vec![
            FeatureKind::Categorical { levels },
            FeatureKind::Numeric,
        ];
        let s = Samples::new(rows, ys, kinds, vec!["c".into(), "x".into()]).unwrap();
        let got = best_split(&s, &all(n), &[0], 1).unwrap();
        let want = brute_best_split(&s, &all(n), &[0], 1);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some(w)) => {
                assert_eq!(g.rule, w.rule);
                assert!((g.rss - w.rss).abs() < 1e-9);
            }
            (g, w) => panic!("library {g:?} vs oracle {w:?}"),
        }
    }
}

#[test]
fn greedy_tree_matches_brute_force_construction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(2..=12);
        let p = rng.random_range(1..=3);
        let s = random_integer_dataset(&mut rng, n, p);
        let max_splits = rng.random_range(0..n);
        let tree = fit_tree_all_features(&s, &all(n), max_splits, 1).unwrap();
        let oracle = brute_greedy_tree(&s, &all(n), max_splits, 1);
        for _ in 0..30 {
            let q: Vec<f64> = (0..p).map(|_| rng.random_range(-1..6) as f64 + 0.25).collect();
            assert_eq!(tree.predict(&q), oracle(&q));
        }
        for i in 0..n {
            assert_eq!(tree.predict(s.row(i)), oracle(s.row(i)));
        }
    }
}

#[test]
fn fit_tree_with_all_features_equals_deterministic_cart() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random_integer_dataset(&mut rng, 12, 3);
    let params = TreeParams {
        max_splits: 11,
        min_leaf: 1,
        features_per_split: 3,
    };
    let a = fit_tree(&s, &all(12), &params, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = fit_tree_all_features(&s, &all(12), 11, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn two_point_separation() {
    let s = Samples::numeric(vec![vec![0.0], vec![1.0]], vec![0.0, 10.0]).unwrap();
    let b = best_split(&s, &[0, 1], &[0], 1).unwrap().unwrap();
    assert_eq!(b.rule, SplitRule::Threshold(0.5));
    assert_eq!(b.rss, 0.0);
}

#[test]
fn binary_category_split() {
    let rows = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
    let s = Samples::new(
        rows,
        vec![8.0, 8.0, 12.0, 12.0],
        vec![FeatureKind::Categorical { levels: 2 }],
        vec!["curing_condition".into()],
    )
    .unwrap();
    let t = fit_tree_all_features(&s, &all(4), 10, 1).unwrap();
    assert_eq!(t.n_splits(), 1);
    assert_eq!(t.predict(&[0.0]), 8.0);
    assert_eq!(t.predict(&[1.0]), 12.0);
}

/// Every rooted subtree of `tree`, as (leaf count, training RSS).
fn enumerate_subtrees(tree: &RegressionTree, s: &Samples) -> Vec<(usize, f64)> {
    use poroforest::cart::NodeKind;
    let nodes = tree.nodes();
    // Members routed through each node.
    let mut members = vec![Vec::new(); nodes.len()];
    for i in 0..s.len() {
        let mut at = 0;
        loop {
            members[at].push(s.target(i));
            match &nodes[at].kind {
                NodeKind::Leaf => break,
                NodeKind::Split { feature, rule, left, right } => {
                    at = if rule.goes_left(s.value(i, *feature)) { *left } else { *right };
                }
            }
        }
    }
    fn walk(at: usize, nodes: &[poroforest::cart::Node], members: &[Vec<f64>]) -> Vec<(usize, f64)> {
        let mut out = vec![(1, rss(&members[at]))];
        if let NodeKind::Split { left, right, .. } = nodes[at].kind {
            for l in walk(left, nodes, members) {
                for r in walk(right, nodes, members) {
                    out.push((l.0 + r.0, l.1 + r.1));
                }
            }
        }
        out
    }
    walk(0, nodes, &members)
}

fn training_rss(tree: &RegressionTree, s: &Samples) -> f64 {
    (0..s.len()).map(|i| (s.target(i) - tree.predict(s.row(i))).powi(2)).sum()
}

#[test]
fn pruning_matches_subtree_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut checked = 0;
    for round in 0..60 {
        let n = rng.random_range(6..=12);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 10.0).collect();
        let s = Samples::numeric(rows, ys).unwrap();
        // Small 3-leaf trees for the first rounds, larger ones afterwards.
        let splits = if round < 30 { 2 } else { 5 };
        let tree = fit_tree_all_features(&s, &all(n), splits, 1).unwrap();
        let subtrees = enumerate_subtrees(&tree, &s);
        for alpha in [0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 1e6] {
            let pruned = prune(&tree, alpha, &s, &all(n)).unwrap();
            let best = subtrees
                .iter()
                .map(|(l, r)| r + alpha * *l as f64)
                .fold(f64::INFINITY, f64::min);
            let got = training_rss(&pruned, &s) + alpha * pruned.n_leaves() as f64;
            assert!((got - best).abs() < 1e-9, "alpha {alpha}: {got} vs {best}");
            checked += 1;
        }
        let path = cost_complexity_path(&tree, &s, &all(n));
        assert_eq!(path.first().unwrap().1.n_leaves(), tree.n_leaves());
        assert_eq!(path.last().unwrap().1.n_leaves(), 1);
        for w in path.windows(2) {
            assert!(w[0].0 < w[1].0);
            assert!(w[0].1.n_leaves() > w[1].1.n_leaves());
        }
    }
    assert_eq!(checked, 600);
}

#[test]
fn pruning_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random_integer_dataset(&mut rng, 12, 2);
    let tree = fit_tree_all_features(&s, &all(12), 11, 1).unwrap();
    assert_eq!(prune(&tree, 0.0, &s, &all(12)).unwrap(), tree);
    assert_eq!(prune(&tree, 1e12, &s, &all(12)).unwrap().n_leaves(), 1);
}

#[test]
fn zero_splits_is_mean_leaf() {
    let s = Samples::numeric(vec![vec![1.0], vec![2.0], vec![3.0]], vec![1.0, 2.0, 6.0]).unwrap();
    let t = fit_tree_all_features(&s, &all(3), 0, 1).unwrap();
    assert_eq!(t.n_leaves(), 1);
    assert_eq!(t.predict(&[100.0]), 3.0);
}

fn leaf_groups(tree: &RegressionTree, s: &Samples) -> std::collections::BTreeMap<usize, Vec<f64>> {
    let mut g = std::collections::BTreeMap::new();
    for i in 0..s.len() {
        g.entry(tree.leaf_index(s.row(i))).or_insert_with(Vec::new).push(s.target(i));
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leaves_hold_means_and_respect_limits(
        seed in 0u64..10_000,
        n in 2usize..40,
        min_leaf in 1usize..5,
        max_splits in 0usize..15,
    ) {
        let n = n.max(min_leaf);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_integer_dataset(&mut rng, n, 3);
        let tree = fit_tree_all_features(&s, &all(n), max_splits, min_leaf).unwrap();
        prop_assert!(tree.n_splits() <= max_splits);
        for (leaf, ys) in leaf_groups(&tree, &s) {
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            prop_assert!((tree.nodes()[leaf].value - mean).abs() < 1e-12);
            prop_assert!(ys.len() >= min_leaf);
        }
    }

    #[test]
    fn more_splits_never_increase_training_rss(seed in 0u64..10_000, n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_integer_dataset(&mut rng, n, 2);
        let mut last = f64::INFINITY;
        for k in 0..n {
            let t = fit_tree_all_features(&s, &all(n), k, 1).unwrap();
            let r = training_rss(&t, &s);
            prop_assert!(r <= last + 1e-9);
            last = r;
        }
    }

    #[test]
    fn monotone_transform_leaves_predictions_unchanged(
        seed in 0u64..10_000,
        n in 3usize..30,
        feature in 0usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let queries: Vec<Vec<f64>> = rows.clone();
        let f = |v: f64| (3.0 * v).exp() + v;
        let transform = |r: &Vec<f64>| {
            let mut r = r.clone();
            r[feature] = f(r[feature]);
            r
        };
        let a = Samples::numeric(rows.clone(), ys.clone()).unwrap();
        let b = Samples::numeric(rows.iter().map(transform).collect(), ys).unwrap();
        let ta = fit_tree_all_features(&a, &all(n), n - 1, 2).unwrap();
        let tb = fit_tree_all_features(&b, &all(n), n - 1, 2).unwrap();
        for q in &queries {
            prop_assert_eq!(ta.predict(q), tb.predict(&transform(q)));
        }
    }
}
