//! Brute-force reference implementations used as test oracles. None of
//! these share code with the library's fitting paths.
#![allow(dead_code)]

use poroforest::cart::{SplitRule, MIN_RSS_REDUCTION, TIE_TOLERANCE};
use poroforest::{FeatureKind, ForestModel, Samples};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct two-pass RSS of a set of responses.
pub fn rss(ys: &[f64]) -> f64 {
    if ys.is_empty() {
        return 0.0;
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    ys.iter().map(|y| (y - mean).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    pub rule: SplitRule,
    pub rss: f64,
}

fn rule_key_less(a: &SplitRule, b: &SplitRule) -> bool {
    match (a, b) {
        (SplitRule::Threshold(x), SplitRule::Threshold(y)) => x < y,
        (SplitRule::Categories(x), SplitRule::Categories(y)) => x < y,
        (SplitRule::Threshold(_), SplitRule::Categories(_)) => true,
        _ => false,
    }
}

/// Exhaustive split search: every cut between distinct sorted values of
/// every numeric feature, every two-block partition of the observed levels
/// of every categorical feature.
pub fn brute_best_split(
    s: &Samples,
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Option<OracleSplit> {
    let ys: Vec<f64> = idx.iter().map(|&i| s.target(i)).collect();
    let parent = rss(&ys);
    let mut best: Option<OracleSplit> = None;
    let mut consider = |cand: OracleSplit| {
        let better = match &best {
            None => true,
            Some(b) => {
                let tol = TIE_TOLERANCE * (1.0 + parent);
                cand.rss < b.rss - tol
                    || ((cand.rss - b.rss).abs() <= tol
                        && (cand.feature < b.feature
                            || (cand.feature == b.feature && rule_key_less(&cand.rule, &b.rule))))
            }
        };
        if better {
            best = Some(cand);
        }
    };
    for &f in features {
        let mut values: Vec<f64> = idx.iter().map(|&i| s.value(i, f)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let candidates: Vec<SplitRule> = match s.kind(f) {
            FeatureKind::Numeric => values
                .windows(2)
                .map(|w| SplitRule::Threshold((w[0] + w[1]) / 2.0))
                .collect(),
            FeatureKind::Categorical { .. } => {
                let levels: Vec<u32> = values.iter().map(|v| *v as u32).collect();
                let l = levels.len();
                (1..(1u32 << l) - 1)
                    .filter(|mask| mask & 1 == 1)
                    .map(|mask| {
                        SplitRule::Categories(
                            (0..l).filter(|b| mask >> b & 1 == 1).map(|b| levels[b]).collect(),
                        )
                    })
                    .collect()
            }
        };
        for rule in candidates {
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| rule.goes_left(s.value(i, f)));
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let yl: Vec<f64> = l.iter().map(|&i| s.target(i)).collect();
            let yr: Vec<f64> = r.iter().map(|&i| s.target(i)).collect();
            consider(OracleSplit {
                feature: f,
                rule,
                rss: rss(&yl) + rss(&yr),
            });
        }
    }
    best.filter(|b| parent - b.rss > MIN_RSS_REDUCTION)
}

/// Greedy breadth-first CART built from the brute-force split search;
/// returns a prediction function.
pub fn brute_greedy_tree(
    s: &Samples,
    idx: &[usize],
    max_splits: usize,
    min_leaf: usize,
) -> impl Fn(&[f64]) -> f64 {
    enum N {
        Leaf(f64),
        Split(usize, SplitRule, usize, usize),
    }
    let mean = |ix: &[usize]| ix.iter().map(|&i| s.target(i)).sum::<f64>() / ix.len() as f64;
    let features: Vec<usize> = (0..s.n_features()).collect();
    let mut nodes = vec![N::Leaf(mean(idx))];
    let mut queue = std::collections::VecDeque::from([(0usize, idx.to_vec())]);
    let mut splits = 0;
    while let Some((id, members)) = queue.pop_front() {
        if splits >= max_splits {
            break;
        }
        if members.len() < 2 * min_leaf {
            continue;
        }
        let Some(b) = brute_best_split(s, &members, &features, min_leaf) else {
            continue;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            members.iter().partition(|&&i| b.rule.goes_left(s.value(i, b.feature)));
        let li = nodes.len();
        nodes.push(N::Leaf(mean(&l)));
        nodes.push(N::Leaf(mean(&r)));
        nodes[id] = N::Split(b.feature, b.rule, li, li + 1);
        splits += 1;
        queue.push_back((li, l));
        queue.push_back((li + 1, r));
    }
    move |row: &[f64]| {
        let mut at = 0;
        loop {
            match &nodes[at] {
                N::Leaf(v) => return *v,
                N::Split(f, rule, l, r) => at = if rule.goes_left(row[*f]) { *l } else { *r },
            }
        }
    }
}

/// OOB predictions recomputed by replaying each tree's bootstrap mask.
pub fn replay_oob(model: &ForestModel, s: &Samples) -> Vec<Option<f64>> {
    (0..s.len())
        .map(|i| {
            let mut preds = Vec::new();
            for (tree, bag) in model.trees.iter().zip(&model.in_bag) {
                if !bag.contains(&i) {
                    preds.push(tree.predict(s.row(i)));
                }
            }
            if preds.is_empty() {
                None
            } else {
                Some(preds.iter().sum::<f64>() / preds.len() as f64)
            }
        })
        .collect()
}

/// OOB MSE by the averaged-prediction reading, from mask replay.
pub fn replay_oob_mse(model: &ForestModel, s: &Samples) -> f64 {
    let preds = replay_oob(model, s);
    let errs: Vec<f64> = preds
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (s.target(i) - p).powi(2)))
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}

/// The other reading of the OOB error: per-observation average of per-tree
/// squared errors. Kept only to document that the two readings differ.
pub fn per_tree_oob_mse(model: &ForestModel, s: &Samples) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..s.len() {
        let errs: Vec<f64> = model
            .trees
            .iter()
            .zip(&model.in_bag)
            .filter(|(_, bag)| !bag.contains(&i))
            .map(|(t, _)| (s.target(i) - t.predict(s.row(i))).powi(2))
            .collect();
        if !errs.is_empty() {
            total += errs.iter().sum::<f64>() / errs.len() as f64;
            count += 1;
        }
    }
    total / count as f64
}

/// Random numeric dataset with small-integer features and responses, so that
/// tied values and tied split scores are common.
pub fn random_integer_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Samples {
    let rows = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0..5) as f64).collect())
        .collect();
    let ys = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
    Samples::numeric(rows, ys).unwrap()
}

/// Linear signal in x0 plus uniform noise; x1 is pure noise.
pub fn signal_and_noise(seed: u64, n: usize) -> Samples {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let ys = rows.iter().map(|r| 5.0 * r[0] + noise.sample(&mut rng)).collect();
    Samples::numeric(rows, ys).unwrap()
}
