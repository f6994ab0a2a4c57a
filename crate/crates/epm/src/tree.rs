//! Single regression trees: exact best-split search for continuous and
//! categorical variables, recursive growth, and cost-complexity pruning with
//! cross-validation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Matrix};
use crate::error::{EpmError, Result};
use crate::metrics::kfold_split;

/// Split realization stored at an internal node. Categorical splits keep the
/// training-time value partition plus the seeded routing choice for values
/// absent at this node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    /// Values <= threshold go left.
    Threshold(f64),
    Categories {
        left: Vec<u32>,
        right: Vec<u32>,
        unseen_left: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        mean: f64,
        variance: f64,
        count: usize,
    },
    Internal {
        var: usize,
        spec: SplitSpec,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Leaf reached by propagating the input down the tree.
    pub fn leaf_for(&self, x: &[f64]) -> (f64, f64, usize) {
        match self {
            TreeNode::Leaf {
                mean,
                variance,
                count,
            } => (*mean, *variance, *count),
            TreeNode::Internal {
                var,
                spec,
                left,
                right,
            } => {
                let go_left = match spec {
                    SplitSpec::Threshold(s) => x[*var] <= *s,
                    SplitSpec::Categories {
                        left: lv,
                        right: rv,
                        unseen_left,
                    } => {
                        let v = x[*var] as u32;
                        if lv.binary_search(&v).is_ok() {
                            true
                        } else if rv.binary_search(&v).is_ok() {
                            false
                        } else {
                            *unseen_left
                        }
                    }
                };
                if go_left {
                    left.leaf_for(x)
                } else {
                    right.leaf_for(x)
                }
            }
        }
    }
}

/// Predicted mean: descend by threshold or set membership and return the
/// leaf constant.
pub fn predict_tree(tree: &TreeNode, x: &[f64]) -> f64 {
    tree.leaf_for(x).0
}

/// Candidate split before the split point is realized.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitDetail {
    /// Optimal threshold lies anywhere in the open interval (lo, hi).
    Interval { lo: f64, hi: f64 },
    Categories { left: Vec<u32>, right: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub loss: f64,
    pub detail: SplitDetail,
}

/// Sum of squared differences to the side means, recomputed directly for the
/// winning partition (ascending row order on each side).
fn direct_loss(y: &[f64], left: &[usize], right: &[usize]) -> f64 {
    let sse = |rows: &[usize]| -> f64 {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
        rows.iter().map(|&i| (y[i] - mean).powi(2)).sum()
    };
    sse(left) + sse(right)
}

/// Best split of `rows` on variable `j`: continuous variables scan the
/// between-value thresholds after sorting, categorical variables scan the
/// k - 1 partitions with consecutive sorted-by-mean scores. Returns an error
/// when fewer than two distinct values are present.
pub fn best_split(
    x: &Matrix,
    y: &[f64],
    kinds: &[ColumnKind],
    rows: &[usize],
    j: usize,
) -> Result<SplitCandidate> {
    match kinds[j] {
        ColumnKind::Continuous => best_split_continuous(x, y, rows, j),
        ColumnKind::Categorical { .. } => best_split_categorical(x, y, rows, j),
    }
}

fn best_split_continuous(x: &Matrix, y: &[f64], rows: &[usize], j: usize) -> Result<SplitCandidate> {
    let mut order: Vec<usize> = rows.to_vec();
    order.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
    let n = order.len();
    let first = x.get(order[0], j);
    if x.get(order[n - 1], j) == first {
        return Err(EpmError::Domain(format!("unsplittable on variable {}", j)));
    }
    let total: f64 = order.iter().map(|&i| y[i]).sum();
    let mut prefix = 0.0;
    let mut best: Option<(f64, usize)> = None; // (score, boundary position)
    for m in 1..n {
        prefix += y[order[m - 1]];
        if x.get(order[m], j) == x.get(order[m - 1], j) {
            continue;
        }
        let nl = m as f64;
        let nr = (n - m) as f64;
        let pr = total - prefix;
        let score = prefix * prefix / nl + pr * pr / nr;
        let better = match best {
            None => true,
            Some((bs, _)) => score > bs,
        };
        if better {
            best = Some((score, m));
        }
    }
    let (_, m) = best.expect("at least one boundary exists");
    let (left, right) = (&order[..m], &order[m..]);
    let loss = direct_loss(y, &sorted(left), &sorted(right));
    Ok(SplitCandidate {
        loss,
        detail: SplitDetail::Interval {
            lo: x.get(order[m - 1], j),
            hi: x.get(order[m], j),
        },
    })
}

fn sorted(rows: &[usize]) -> Vec<usize> {
    let mut v = rows.to_vec();
    v.sort_unstable();
    v
}

fn best_split_categorical(x: &Matrix, y: &[f64], rows: &[usize], j: usize) -> Result<SplitCandidate> {
    // group rows by categorical value
    let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
    for &i in rows {
        let v = x.get(i, j) as u32;
        match groups.iter_mut().find(|(g, _)| *g == v) {
            Some((_, members)) => members.push(i),
            None => groups.push((v, vec![i])),
        }
    }
    if groups.len() < 2 {
        return Err(EpmError::Domain(format!("unsplittable on variable {}", j)));
    }
    // sort values by mean response (ties by value for determinism)
    let mut scored: Vec<(f64, u32, f64, usize)> = groups
        .iter()
        .map(|(v, members)| {
            let s: f64 = members.iter().map(|&i| y[i]).sum();
            let c = members.len();
            (s / c as f64, *v, s, c)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let total_sum: f64 = scored.iter().map(|s| s.2).sum();
    let total_cnt: usize = scored.iter().map(|s| s.3).sum();
    let mut pref_sum = 0.0;
    let mut pref_cnt = 0usize;
    let mut best: Option<(f64, usize)> = None; // (score, prefix length)
    for t in 1..scored.len() {
        pref_sum += scored[t - 1].2;
        pref_cnt += scored[t - 1].3;
        let nl = pref_cnt as f64;
        let nr = (total_cnt - pref_cnt) as f64;
        let pr = total_sum - pref_sum;
        let score = pref_sum * pref_sum / nl + pr * pr / nr;
        let better = match best {
            None => true,
            Some((bs, _)) => score > bs,
        };
        if better {
            best = Some((score, t));
        }
    }
    let (_, t) = best.expect("k >= 2 values");
    let mut left_vals: Vec<u32> = scored[..t].iter().map(|s| s.1).collect();
    let mut right_vals: Vec<u32> = scored[t..].iter().map(|s| s.1).collect();
    left_vals.sort_unstable();
    right_vals.sort_unstable();
    let left_rows: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| left_vals.binary_search(&(x.get(i, j) as u32)).is_ok())
        .collect();
    let right_rows: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&i| !left_vals.binary_search(&(x.get(i, j) as u32)).is_ok())
        .collect();
    let loss = direct_loss(y, &sorted(&left_rows), &sorted(&right_rows));
    Ok(SplitCandidate {
        loss,
        detail: SplitDetail::Categories {
            left: left_vals,
            right: right_vals,
        },
    })
}

/// Growth policy shared by standalone trees and forest trees.
#[derive(Debug, Clone)]
pub struct GrowthConfig {
    pub min_leaf: usize,
    /// Split only nodes with more than this many points; `None` grows until
    /// nodes are pure in x.
    pub n_min: Option<usize>,
    /// Number of candidate variables drawn per node; `None` considers all.
    pub vars_per_node: Option<usize>,
    /// Realize continuous split points uniformly inside the optimal interval
    /// instead of at its midpoint.
    pub random_split_point: bool,
    /// Lower bound on stored leaf variances.
    pub var_floor: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            min_leaf: 1,
            n_min: None,
            vars_per_node: None,
            random_split_point: false,
            var_floor: 0.0,
        }
    }
}

fn leaf_from_rows(y: &[f64], rows: &[usize], var_floor: f64) -> TreeNode {
    let n = rows.len();
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let variance = if n < 2 {
        var_floor
    } else {
        let v = rows.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        v.max(var_floor)
    };
    TreeNode::Leaf {
        mean,
        variance,
        count: n,
    }
}

fn rows_share_y(y: &[f64], rows: &[usize]) -> bool {
    let first = y[rows[0]];
    rows.iter().all(|&i| y[i] == first)
}

fn rows_share_x(x: &Matrix, rows: &[usize]) -> bool {
    let first = rows[0];
    rows.iter().skip(1).all(|&i| {
        (0..x.n_cols()).all(|j| {
            let (a, b) = (x.get(first, j), x.get(i, j));
            a == b || (a.is_nan() && b.is_nan())
        })
    })
}

pub fn grow(
    x: &Matrix,
    y: &[f64],
    kinds: &[ColumnKind],
    rows: &[usize],
    cfg: &GrowthConfig,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    assert!(!rows.is_empty());
    if let Some(n_min) = cfg.n_min {
        if rows.len() <= n_min {
            return leaf_from_rows(y, rows, cfg.var_floor);
        }
    }
    if rows_share_x(x, rows) || rows_share_y(y, rows) {
        return leaf_from_rows(y, rows, cfg.var_floor);
    }

    let p = x.n_cols();
    let candidate_vars: Vec<usize> = match cfg.vars_per_node {
        None => (0..p).collect(),
        Some(v) => {
            let mut idx = rand::seq::index::sample(rng, p, v.min(p)).into_vec();
            idx.sort_unstable();
            idx
        }
    };

    let mut best: Option<(f64, usize, SplitDetail)> = None;
    for &j in &candidate_vars {
        let cand = match best_split(x, y, kinds, rows, j) {
            Ok(c) => c,
            Err(_) => continue,
        };
        if child_sizes_ok(x, rows, j, &cand.detail, cfg.min_leaf) {
            let better = match &best {
                None => true,
                Some((bl, _, _)) => cand.loss < *bl,
            };
            if better {
                best = Some((cand.loss, j, cand.detail));
            }
        }
    }

    let (_, var, detail) = match best {
        Some(b) => b,
        None => return leaf_from_rows(y, rows, cfg.var_floor),
    };

    let spec = match detail {
        SplitDetail::Interval { lo, hi } => {
            let s = if cfg.random_split_point {
                lo + rng.gen::<f64>() * (hi - lo)
            } else {
                lo + 0.5 * (hi - lo)
            };
            SplitSpec::Threshold(s)
        }
        SplitDetail::Categories { left, right } => SplitSpec::Categories {
            left,
            right,
            unseen_left: rng.gen::<bool>(),
        },
    };

    let (left_rows, right_rows) = partition_rows(x, rows, var, &spec);
    let left = grow(x, y, kinds, &left_rows, cfg, rng);
    let right = grow(x, y, kinds, &right_rows, cfg, rng);
    TreeNode::Internal {
        var,
        spec,
        left: Box::new(left),
        right: Box::new(right),
    }
}

fn child_sizes_ok(x: &Matrix, rows: &[usize], j: usize, detail: &SplitDetail, min_leaf: usize) -> bool {
    let left_count = match detail {
        SplitDetail::Interval { lo, .. } => rows.iter().filter(|&&i| x.get(i, j) <= *lo).count(),
        SplitDetail::Categories { left, .. } => rows
            .iter()
            .filter(|&&i| left.binary_search(&(x.get(i, j) as u32)).is_ok())
            .count(),
    };
    left_count >= min_leaf && rows.len() - left_count >= min_leaf
}

fn partition_rows(x: &Matrix, rows: &[usize], var: usize, spec: &SplitSpec) -> (Vec<usize>, Vec<usize>) {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &i in rows {
        let go_left = match spec {
            SplitSpec::Threshold(s) => x.get(i, var) <= *s,
            SplitSpec::Categories {
                left: lv,
                unseen_left,
                right: rv,
            } => {
                let v = x.get(i, var) as u32;
                if lv.binary_search(&v).is_ok() {
                    true
                } else if rv.binary_search(&v).is_ok() {
                    false
                } else {
                    *unseen_left
                }
            }
        };
        if go_left {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    (left, right)
}

/// Recursive best-split growth over all rows until nodes are pure in x.
pub fn grow_tree(x: &Matrix, y: &[f64], kinds: &[ColumnKind], min_leaf: usize) -> TreeNode {
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    let cfg = GrowthConfig {
        min_leaf,
        ..GrowthConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    grow(x, y, kinds, &rows, &cfg, &mut rng)
}

/// Annotated tree used by cost-complexity pruning.
#[derive(Debug, Clone)]
struct PNode {
    mean: f64,
    count: usize,
    /// SSE of the node's training rows against the node mean.
    sse: f64,
    split: Option<(usize, SplitSpec, Box<PNode>, Box<PNode>)>,
}

impl PNode {
    fn subtree_sse(&self) -> f64 {
        match &self.split {
            None => self.sse,
            Some((_, _, l, r)) => l.subtree_sse() + r.subtree_sse(),
        }
    }

    fn n_leaves(&self) -> usize {
        match &self.split {
            None => 1,
            Some((_, _, l, r)) => l.n_leaves() + r.n_leaves(),
        }
    }

    /// Minimum link strength g(t) over internal nodes.
    fn min_g(&self) -> Option<f64> {
        let mut out = None;
        self.visit_g(&mut |g| {
            out = Some(match out {
                None => g,
                Some(m) if g < m => g,
                Some(m) => m,
            });
        });
        out
    }

    fn visit_g(&self, f: &mut impl FnMut(f64)) {
        if let Some((_, _, l, r)) = &self.split {
            let leaves = self.n_leaves();
            let g = (self.sse - self.subtree_sse()) / (leaves as f64 - 1.0);
            f(g);
            l.visit_g(f);
            r.visit_g(f);
        }
    }

    /// Collapses every internal node whose g(t) is within tolerance of the
    /// target (a weakest-link step).
    fn collapse_links(&mut self, target: f64) {
        if let Some((_, _, l, r)) = &mut self.split {
            l.collapse_links(target);
            r.collapse_links(target);
        }
        if let Some((_, _, l, r)) = &self.split {
            let leaves = l.n_leaves() + r.n_leaves();
            let g = (self.sse - self.subtree_sse()) / (leaves as f64 - 1.0);
            if g <= target {
                self.split = None;
            }
        }
    }

    /// Weakest-link pruning for complexity parameter alpha: collapse while
    /// the weakest link is <= alpha.
    fn prune_to_alpha(&mut self, alpha: f64) {
        while let Some(g) = self.min_g() {
            if g <= alpha {
                self.collapse_links(g);
            } else {
                break;
            }
        }
    }

    fn to_tree(&self, var_floor: f64) -> TreeNode {
        match &self.split {
            None => TreeNode::Leaf {
                mean: self.mean,
                variance: if self.count < 2 {
                    var_floor
                } else {
                    (self.sse / (self.count - 1) as f64).max(var_floor)
                },
                count: self.count,
            },
            Some((var, spec, l, r)) => TreeNode::Internal {
                var: *var,
                spec: spec.clone(),
                left: Box::new(l.to_tree(var_floor)),
                right: Box::new(r.to_tree(var_floor)),
            },
        }
    }

    fn predict(&self, x: &Matrix, i: usize) -> f64 {
        match &self.split {
            None => self.mean,
            Some((var, spec, l, r)) => {
                let go_left = match spec {
                    SplitSpec::Threshold(s) => x.get(i, *var) <= *s,
                    SplitSpec::Categories {
                        left: lv,
                        right: rv,
                        unseen_left,
                    } => {
                        let v = x.get(i, *var) as u32;
                        if lv.binary_search(&v).is_ok() {
                            true
                        } else if rv.binary_search(&v).is_ok() {
                            false
                        } else {
                            *unseen_left
                        }
                    }
                };
                if go_left {
                    l.predict(x, i)
                } else {
                    r.predict(x, i)
                }
            }
        }
    }
}

/// Annotates a grown tree with per-node training statistics by routing the
/// training rows down the stored splits.
fn annotate(node: &TreeNode, x: &Matrix, y: &[f64], rows: &[usize]) -> PNode {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let sse = rows.iter().map(|&i| (y[i] - mean).powi(2)).sum();
    match node {
        TreeNode::Leaf { .. } => PNode {
            mean,
            count: rows.len(),
            sse,
            split: None,
        },
        TreeNode::Internal {
            var,
            spec,
            left,
            right,
        } => {
            let (lr, rr) = partition_rows(x, rows, *var, spec);
            // degenerate routing would starve a child; treat as leaf
            if lr.is_empty() || rr.is_empty() {
                return PNode {
                    mean,
                    count: rows.len(),
                    sse,
                    split: None,
                };
            }
            PNode {
                mean,
                count: rows.len(),
                sse,
                split: Some((
                    *var,
                    spec.clone(),
                    Box::new(annotate(left, x, y, &lr)),
                    Box::new(annotate(right, x, y, &rr)),
                )),
            }
        }
    }
}

/// Critical alphas of the weakest-link sequence, non-decreasing.
fn alpha_sequence(root: &PNode) -> Vec<f64> {
    let mut work = root.clone();
    let mut alphas = Vec::new();
    while let Some(g) = work.min_g() {
        alphas.push(g.max(0.0));
        work.collapse_links(g);
    }
    alphas
}

/// Cost-complexity pruning: the weakest-link alpha sequence of the full tree
/// provides candidate complexities; k-fold cross-validation picks the one
/// with minimum held-out squared error (ties prefer the simpler tree) and the
/// full tree is pruned to it.
pub fn prune_tree(
    tree: &TreeNode,
    x: &Matrix,
    y: &[f64],
    kinds: &[ColumnKind],
    folds: usize,
    seed: u64,
) -> Result<TreeNode> {
    let n = x.n_rows();
    if folds > n {
        return Err(EpmError::Config(format!(
            "pruning needs n >= folds ({} < {})",
            n, folds
        )));
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let annotated = annotate(tree, x, y, &all_rows);
    if annotated.split.is_none() {
        return Ok(annotated.to_tree(0.0));
    }
    let alphas = alpha_sequence(&annotated);

    // representative alpha per interval of the sequence
    let mut candidates: Vec<f64> = vec![0.0];
    for w in alphas.windows(2) {
        let rep = if w[0] <= 0.0 {
            w[1] / 2.0
        } else {
            (w[0] * w[1]).sqrt()
        };
        candidates.push(rep);
    }
    candidates.push(*alphas.last().unwrap());
    candidates.dedup();

    let fold_sets = kfold_split(n, folds, seed)?;
    let mut cv_sse = vec![0.0; candidates.len()];
    for f in 0..folds {
        let val = &fold_sets[f];
        let train: Vec<usize> = fold_sets
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let cfg = GrowthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + f as u64));
        let fold_tree = grow(x, y, kinds, &train, &cfg, &mut rng);
        let fold_annotated = annotate(&fold_tree, x, y, &train);
        for (c, &alpha) in candidates.iter().enumerate() {
            let mut pruned = fold_annotated.clone();
            pruned.prune_to_alpha(alpha);
            for &i in val {
                let e = pruned.predict(x, i) - y[i];
                cv_sse[c] += e * e;
            }
        }
    }

    // minimum CV error; ties resolved toward the larger alpha
    let mut best = 0usize;
    for c in 1..candidates.len() {
        if cv_sse[c] <= cv_sse[best] {
            best = c;
        }
    }
    let mut pruned = annotated;
    pruned.prune_to_alpha(candidates[best]);
    Ok(pruned.to_tree(0.0))
}

/// Training sum of squared errors of a tree on the given data.
pub fn training_sse(tree: &TreeNode, x: &Matrix, y: &[f64]) -> f64 {
    (0..x.n_rows())
        .map(|i| {
            let e = predict_tree(tree, x.row(i)) - y[i];
            e * e
        })
        .sum()
}
