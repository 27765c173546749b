//! CART regression trees: greedy binary splitting on residual sum of squares,
//! categorical-aware rules, size controls and cost-complexity pruning.

use std::cmp::Ordering;
use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::{FeatureKind, Predictor, Samples};

/// A split must lower the node RSS by more than this to be accepted.
pub const MIN_RSS_REDUCTION: f64 = 1e-12;

/// Relative width of the band inside which two RSS values count as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// Maximum number of internal decision nodes.
    pub max_splits: usize,
    /// Minimum number of observations per leaf.
    pub min_leaf: usize,
    /// Size of the random predictor subset drawn at every node.
    pub features_per_split: usize,
}

impl TreeParams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.min_leaf < 1 {
            return Err(Error::param("min_leaf must be >= 1"));
        }
        if self.features_per_split < 1 || self.features_per_split > n_features {
            return Err(Error::param(format!(
                "features_per_split {} outside [1, {n_features}]",
                self.features_per_split
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Left iff value <= threshold.
    Threshold(f64),
    /// Left iff the level code is in the (sorted) set.
    Categories(Vec<u32>),
}

impl SplitRule {
    pub fn goes_left(&self, value: f64) -> bool {
        match self {
            SplitRule::Threshold(t) => value <= *t,
            SplitRule::Categories(set) => set.binary_search(&(value as u32)).is_ok(),
        }
    }

    fn tie_order(&self, other: &SplitRule) -> Ordering {
        match (self, other) {
            (SplitRule::Threshold(a), SplitRule::Threshold(b)) => a.total_cmp(b),
            (SplitRule::Categories(a), SplitRule::Categories(b)) => a.cmp(b),
            (SplitRule::Threshold(_), SplitRule::Categories(_)) => Ordering::Less,
            (SplitRule::Categories(_), SplitRule::Threshold(_)) => Ordering::Greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub rule: SplitRule,
    /// Sum of the two child RSS values.
    pub rss: f64,
    pub left_count: usize,
    pub right_count: usize,
}

/// `true` when `a` beats `b`: clearly lower RSS, or tied RSS with the lower
/// feature index and then the smaller rule.
pub fn is_better_split(a: &SplitCandidate, b: &SplitCandidate, scale: f64) -> bool {
    let tol = TIE_TOLERANCE * (1.0 + scale);
    if a.rss < b.rss - tol {
        return true;
    }
    if a.rss > b.rss + tol {
        return false;
    }
    a.feature.cmp(&b.feature).then_with(|| a.rule.tie_order(&b.rule)) == Ordering::Less
}

fn rss_of(sum: f64, sum_sq: f64, count: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    (sum_sq - sum * sum / count as f64).max(0.0)
}

/// Node statistics over the given (possibly repeated) indices.
fn node_stats(samples: &Samples, indices: &[usize]) -> (f64, f64) {
    let n = indices.len() as f64;
    let mean = indices.iter().map(|&i| samples.target(i)).sum::<f64>() / n;
    let rss = indices
        .iter()
        .map(|&i| (samples.target(i) - mean).powi(2))
        .sum::<f64>();
    (mean, rss)
}

/// Best admissible split of the observations `indices` over `features`.
///
/// Returns `Ok(None)` when no split satisfies `min_leaf` on both sides or no
/// split lowers the RSS by more than [`MIN_RSS_REDUCTION`].
pub fn best_split(
    samples: &Samples,
    indices: &[usize],
    features: &[usize],
    min_leaf: usize,
) -> Result<Option<SplitCandidate>> {
    if indices.is_empty() {
        return Err(Error::Empty("best_split needs at least one observation".into()));
    }
    let min_leaf = min_leaf.max(1);
    if indices.len() < 2 * min_leaf {
        return Ok(None);
    }
    let (mean, parent_rss) = node_stats(samples, indices);
    let mut best: Option<SplitCandidate> = None;
    let mut offer = |c: SplitCandidate| {
        if best.as_ref().is_none_or(|b| is_better_split(&c, b, parent_rss)) {
            best = Some(c);
        }
    };
    for &f in features {
        match samples.kind(f) {
            FeatureKind::Numeric => numeric_candidates(samples, indices, f, min_leaf, mean, &mut offer),
            FeatureKind::Categorical { .. } => {
                categorical_candidates(samples, indices, f, min_leaf, mean, &mut offer)
            }
        }
    }
    Ok(best.filter(|b| parent_rss - b.rss > MIN_RSS_REDUCTION))
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

fn numeric_candidates(
    samples: &Samples,
    indices: &[usize],
    feature: usize,
    min_leaf: usize,
    center: f64,
    offer: &mut impl FnMut(SplitCandidate),
) {
    let mut pairs: Vec<(f64, f64)> = indices
        .iter()
        .map(|&i| (samples.value(i, feature), samples.target(i) - center))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = pairs.len();
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for k in 1..m {
        let y = pairs[k - 1].1;
        sum += y;
        sum_sq += y * y;
        if k < min_leaf || m - k < min_leaf || pairs[k - 1].0 == pairs[k].0 {
            continue;
        }
        let rss = rss_of(sum, sum_sq, k) + rss_of(total - sum, total_sq - sum_sq, m - k);
        offer(SplitCandidate {
            feature,
            rule: SplitRule::Threshold(midpoint(pairs[k - 1].0, pairs[k].0)),
            rss,
            left_count: k,
            right_count: m - k,
        });
    }
}

fn categorical_candidates(
    samples: &Samples,
    indices: &[usize],
    feature: usize,
    min_leaf: usize,
    center: f64,
    offer: &mut impl FnMut(SplitCandidate),
) {
    // level -> (count, sum, sum_sq)
    let mut levels: Vec<(u32, usize, f64, f64)> = Vec::new();
    for &i in indices {
        let code = samples.value(i, feature) as u32;
        let y = samples.target(i) - center;
        match levels.iter_mut().find(|l| l.0 == code) {
            Some(l) => {
                l.1 += 1;
                l.2 += y;
                l.3 += y * y;
            }
            None => levels.push((code, 1, y, y * y)),
        }
    }
    if levels.len() < 2 {
        return;
    }
    levels.sort_by(|a, b| {
        (a.2 / a.1 as f64)
            .total_cmp(&(b.2 / b.1 as f64))
            .then(a.0.cmp(&b.0))
    });
    let m = indices.len();
    let total: f64 = levels.iter().map(|l| l.2).sum();
    let total_sq: f64 = levels.iter().map(|l| l.3).sum();
    let min_code = levels.iter().map(|l| l.0).min().expect("non-empty");
    let (mut count, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    for k in 1..levels.len() {
        let l = &levels[k - 1];
        count += l.1;
        sum += l.2;
        sum_sq += l.3;
        if count < min_leaf || m - count < min_leaf {
            continue;
        }
        let rss = rss_of(sum, sum_sq, count) + rss_of(total - sum, total_sq - sum_sq, m - count);
        let mut left: Vec<u32> = levels[..k].iter().map(|l| l.0).collect();
        let mut left_count = count;
        // Canonical form: the left set holds the smallest observed level.
        if !left.contains(&min_code) {
            left = levels[k..].iter().map(|l| l.0).collect();
            left_count = m - count;
        }
        left.sort_unstable();
        offer(SplitCandidate {
            feature,
            rule: SplitRule::Categories(left),
            rss,
            left_count,
            right_count: m - left_count,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Leaf,
    Split {
        feature: usize,
        rule: SplitRule,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Mean training response of the observations routed here.
    pub value: f64,
    pub count: usize,
    #[serde(flatten)]
    pub kind: NodeKind,
}

/// Binary regression tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// Single-leaf tree predicting `value`.
    pub fn constant(value: f64, count: usize) -> Self {
        Self {
            nodes: vec![Node {
                value,
                count,
                kind: NodeKind::Leaf,
            }],
        }
    }

    /// Builds a tree from raw nodes, checking child links.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("tree without nodes".into()));
        }
        let mut seen = vec![false; nodes.len()];
        for node in &nodes {
            if let NodeKind::Split { left, right, .. } = node.kind {
                for c in [left, right] {
                    if c == 0 || c >= nodes.len() || seen[c] {
                        return Err(Error::param(format!("invalid child link {c}")));
                    }
                    seen[c] = true;
                }
            }
        }
        if seen.iter().skip(1).any(|s| !s) {
            return Err(Error::param("unreachable tree node"));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Leaf).count()
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.len() - self.n_leaves()
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at].kind {
                NodeKind::Leaf => return at,
                NodeKind::Split {
                    feature,
                    rule,
                    left,
                    right,
                } => at = if rule.goes_left(row[*feature]) { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.nodes[self.leaf_index(row)].value
    }

    /// Predictor indices used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Split { feature, .. } => Some(feature),
                NodeKind::Leaf => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

impl Predictor for RegressionTree {
    fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict(row)
    }
}

/// Grows a tree with a fresh random predictor subset at every node.
///
/// `indices` may repeat observations (bootstrap samples). Nodes are expanded
/// breadth-first until `max_splits` internal nodes exist.
pub fn fit_tree<R: Rng + ?Sized>(
    samples: &Samples,
    indices: &[usize],
    params: &TreeParams,
    rng: &mut R,
) -> Result<RegressionTree> {
    let p = samples.n_features();
    params.validate(p)?;
    let k = params.features_per_split;
    grow(samples, indices, params.max_splits, params.min_leaf, |_| {
        let mut f = index::sample(rng, p, k).into_vec();
        f.sort_unstable();
        f
    })
}

/// Grows a tree that considers every predictor at every node; consumes no
/// randomness.
pub fn fit_tree_all_features(
    samples: &Samples,
    indices: &[usize],
    max_splits: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    if min_leaf < 1 {
        return Err(Error::param("min_leaf must be >= 1"));
    }
    let all: Vec<usize> = (0..samples.n_features()).collect();
    grow(samples, indices, max_splits, min_leaf, |_| all.clone())
}

fn grow(
    samples: &Samples,
    indices: &[usize],
    max_splits: usize,
    min_leaf: usize,
    mut draw_features: impl FnMut(usize) -> Vec<usize>,
) -> Result<RegressionTree> {
    if indices.is_empty() {
        return Err(Error::Empty("cannot fit a tree on zero observations".into()));
    }
    if indices.len() < min_leaf {
        return Err(Error::param(format!(
            "{} observations is fewer than min_leaf {min_leaf}",
            indices.len()
        )));
    }
    let (root_mean, _) = node_stats(samples, indices);
    let mut nodes = vec![Node {
        value: root_mean,
        count: indices.len(),
        kind: NodeKind::Leaf,
    }];
    let mut queue = VecDeque::from([(0usize, indices.to_vec())]);
    let mut splits = 0;
    while let Some((id, members)) = queue.pop_front() {
        if splits >= max_splits {
            break;
        }
        if members.len() < 2 * min_leaf {
            continue;
        }
        let features = draw_features(samples.n_features());
        let Some(split) = best_split(samples, &members, &features, min_leaf)? else {
            continue;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = members
            .iter()
            .partition(|&&i| split.rule.goes_left(samples.value(i, split.feature)));
        let l_id = nodes.len();
        let r_id = l_id + 1;
        for part in [&left, &right] {
            nodes.push(Node {
                value: node_stats(samples, part).0,
                count: part.len(),
                kind: NodeKind::Leaf,
            });
        }
        nodes[id].kind = NodeKind::Split {
            feature: split.feature,
            rule: split.rule,
            left: l_id,
            right: r_id,
        };
        splits += 1;
        queue.push_back((l_id, left));
        queue.push_back((r_id, right));
    }
    Ok(RegressionTree { nodes })
}

/// Per-node training RSS when each node is treated as a leaf, from routing
/// `indices` through the tree. Nodes reached by nothing get RSS 0.
fn routed_stats(tree: &RegressionTree, samples: &Samples, indices: &[usize]) -> Vec<(usize, f64, f64)> {
    let mut acc = vec![(0usize, 0.0f64, 0.0f64); tree.nodes.len()];
    for &i in indices {
        let row = samples.row(i);
        let y = samples.target(i);
        let mut at = 0;
        loop {
            acc[at].0 += 1;
            acc[at].1 += y;
            match &tree.nodes[at].kind {
                NodeKind::Leaf => break,
                NodeKind::Split {
                    feature,
                    rule,
                    left,
                    right,
                } => at = if rule.goes_left(row[*feature]) { *left } else { *right },
            }
        }
    }
    let means: Vec<f64> = acc
        .iter()
        .zip(&tree.nodes)
        .map(|(a, n)| if a.0 > 0 { a.1 / a.0 as f64 } else { n.value })
        .collect();
    for &i in indices {
        let row = samples.row(i);
        let y = samples.target(i);
        let mut at = 0;
        loop {
            acc[at].2 += (y - means[at]).powi(2);
            match &tree.nodes[at].kind {
                NodeKind::Leaf => break,
                NodeKind::Split {
                    feature,
                    rule,
                    left,
                    right,
                } => at = if rule.goes_left(row[*feature]) { *left } else { *right },
            }
        }
    }
    acc.iter()
        .zip(means)
        .map(|(a, m)| (a.0, m, a.2))
        .collect()
}

/// Copies the subtree kept by `keep_split`, re-indexing nodes and refreshing
/// node means from `stats`.
fn rebuild(tree: &RegressionTree, stats: &[(usize, f64, f64)], keep_split: &[bool]) -> RegressionTree {
    let mut nodes = Vec::new();
    let mut queue = VecDeque::from([(0usize, None::<(usize, bool)>)]);
    while let Some((old, parent)) = queue.pop_front() {
        let new_id = nodes.len();
        let src = &tree.nodes[old];
        let (count, value) = if stats[old].0 > 0 {
            (stats[old].0, stats[old].1)
        } else {
            (src.count, src.value)
        };
        nodes.push(Node {
            value,
            count,
            kind: NodeKind::Leaf,
        });
        if let Some((p, is_left)) = parent {
            if let NodeKind::Split { left, right, .. } = &mut nodes[p].kind {
                if is_left {
                    *left = new_id;
                } else {
                    *right = new_id;
                }
            }
        }
        if let NodeKind::Split {
            feature,
            rule,
            left,
            right,
        } = &src.kind
        {
            if keep_split[old] {
                nodes[new_id].kind = NodeKind::Split {
                    feature: *feature,
                    rule: rule.clone(),
                    left: usize::MAX,
                    right: usize::MAX,
                };
                queue.push_back((*left, Some((new_id, true))));
                queue.push_back((*right, Some((new_id, false))));
            }
        }
    }
    RegressionTree { nodes }
}

fn children(tree: &RegressionTree, id: usize) -> Option<(usize, usize)> {
    match tree.nodes[id].kind {
        NodeKind::Split { left, right, .. } => Some((left, right)),
        NodeKind::Leaf => None,
    }
}

/// Subtree minimizing `RSS + alpha * leaves` on the given observations.
/// Ties are resolved towards the smaller subtree.
pub fn prune(tree: &RegressionTree, alpha: f64, samples: &Samples, indices: &[usize]) -> Result<RegressionTree> {
    if !(alpha >= 0.0) {
        return Err(Error::param(format!("complexity penalty {alpha} must be >= 0")));
    }
    let stats = routed_stats(tree, samples, indices);
    let keep = prune_mask(tree, &stats, alpha);
    Ok(rebuild(tree, &stats, &keep))
}

/// Weakest-link pruning sequence: `(alpha_k, T_k)` pairs starting with the
/// full tree at alpha 0 and ending with the root-only tree. `T_k` is optimal
/// for alpha in `[alpha_k, alpha_{k+1})`.
pub fn cost_complexity_path(
    tree: &RegressionTree,
    samples: &Samples,
    indices: &[usize],
) -> Vec<(f64, RegressionTree)> {
    let stats = routed_stats(tree, samples, indices);
    // (rss of kept subtree, number of kept leaves)
    fn subtree(t: &RegressionTree, id: usize, stats: &[(usize, f64, f64)], keep: &[bool]) -> (f64, usize) {
        match children(t, id) {
            Some((l, r)) if keep[id] => {
                let a = subtree(t, l, stats, keep);
                let b = subtree(t, r, stats, keep);
                (a.0 + b.0, a.1 + b.1)
            }
            _ => (stats[id].2, 1),
        }
    }

    // Start from the smallest subtree optimal at alpha = 0.
    let mut path = Vec::new();
    let mut keep = prune_mask(tree, &stats, 0.0);
    path.push((0.0, rebuild(tree, &stats, &keep)));
    loop {
        let mut weakest: Option<(f64, usize)> = None;
        for id in 0..tree.nodes.len() {
            if !keep[id] || !reachable(tree, &keep, id) {
                continue;
            }
            let (r_sub, leaves) = subtree(tree, id, &stats, &keep);
            let g = (stats[id].2 - r_sub) / (leaves as f64 - 1.0);
            if weakest.is_none_or(|(wg, _)| g < wg) {
                weakest = Some((g, id));
            }
        }
        let Some((g, _)) = weakest else { break };
        // Collapse every node attaining the minimum.
        let tol = TIE_TOLERANCE * (1.0 + g.abs());
        let collapse: Vec<usize> = (0..tree.nodes.len())
            .filter(|&id| keep[id] && reachable(tree, &keep, id))
            .filter(|&id| {
                let (r_sub, leaves) = subtree(tree, id, &stats, &keep);
                (stats[id].2 - r_sub) / (leaves as f64 - 1.0) <= g + tol
            })
            .collect();
        for id in collapse {
            keep[id] = false;
        }
        path.push((g.max(0.0), rebuild(tree, &stats, &keep)));
    }
    path
}

fn prune_mask(tree: &RegressionTree, stats: &[(usize, f64, f64)], alpha: f64) -> Vec<bool> {
    fn walk(t: &RegressionTree, id: usize, alpha: f64, stats: &[(usize, f64, f64)], keep: &mut [bool]) -> f64 {
        let as_leaf = stats[id].2 + alpha;
        match children(t, id) {
            None => as_leaf,
            Some((l, r)) => {
                let split = walk(t, l, alpha, stats, keep) + walk(t, r, alpha, stats, keep);
                if split < as_leaf - TIE_TOLERANCE * (1.0 + as_leaf.abs()) {
                    keep[id] = true;
                    split
                } else {
                    as_leaf
                }
            }
        }
    }
    let mut keep = vec![false; tree.nodes.len()];
    walk(tree, 0, alpha, stats, &mut keep);
    keep
}

fn reachable(tree: &RegressionTree, keep: &[bool], target: usize) -> bool {
    let mut stack = vec![0usize];
    while let Some(id) = stack.pop() {
        if id == target {
            return true;
        }
        if keep[id] {
            if let Some((l, r)) = children(tree, id) {
                stack.push(l);
                stack.push(r);
            }
        }
    }
    false
}
