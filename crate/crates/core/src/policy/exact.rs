//! Exhaustive depth-bounded policy-tree search.
//!
//! Every feature is compressed to the ranks of its distinct training values.
//! A node's best depth-1 subtree is read off per-feature histograms of reward
//! sums; depth-2 search sweeps each feature's split points once while moving
//! units from the right to the left child and updating those histograms
//! incrementally, so each root split costs O(Σ bins) rather than a re-sort.
//! Deeper trees recurse on materialized children. The cost is quadratic in
//! the number of distinct values per level.

use rayon::prelude::*;

use super::tree::PolicyTree;

/// Feature values compressed to dense ranks.
pub(crate) struct Binned {
    /// `bins[j][i]`: rank of unit `i`'s value among feature `j`'s distinct values.
    pub bins: Vec<Vec<u32>>,
    /// `values[j]`: sorted distinct values of feature `j`.
    pub values: Vec<Vec<f64>>,
}

impl Binned {
    pub fn new(features: &[Vec<f64>], p: usize) -> Self {
        let mut bins = Vec::with_capacity(p);
        let mut values = Vec::with_capacity(p);
        for j in 0..p {
            let mut v: Vec<f64> = features.iter().map(|x| x[j]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            let b = features
                .iter()
                .map(|x| v.partition_point(|&u| u < x[j]) as u32)
                .collect();
            bins.push(b);
            values.push(v);
        }
        Binned { bins, values }
    }

    pub fn p(&self) -> usize {
        self.bins.len()
    }
}

/// Best subtree found for a node: sum of `π·r` over its units, and the subtree.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub value: f64,
    pub tree: PolicyTree,
}

pub(crate) fn leaf(sum: f64) -> Candidate {
    // Zero-sum leaves do not treat.
    if sum > 0.0 {
        Candidate { value: sum, tree: PolicyTree::constant(1) }
    } else {
        Candidate { value: -sum, tree: PolicyTree::constant(-1) }
    }
}

/// Per-feature reward-sum and count histograms over one node's units.
#[derive(Clone)]
struct Hist {
    sum: Vec<Vec<f64>>,
    count: Vec<Vec<u32>>,
}

impl Hist {
    fn empty(b: &Binned) -> Self {
        Hist {
            sum: b.values.iter().map(|v| vec![0.0; v.len()]).collect(),
            count: b.values.iter().map(|v| vec![0; v.len()]).collect(),
        }
    }

    fn add(&mut self, b: &Binned, unit: usize, r: f64) {
        for j in 0..b.p() {
            let k = b.bins[j][unit] as usize;
            self.sum[j][k] += r;
            self.count[j][k] += 1;
        }
    }
}

/// Best depth ≤ 1 subtree from histograms. `total` is the node's reward sum.
///
/// Candidates are scanned as: no split first, then features in index order
/// and thresholds ascending; only a strictly better value replaces the incumbent.
/// `min_leaf` bounds the child sizes (1 = unconstrained). Returns the number
/// of thresholds examined alongside the candidate.
fn best_depth1(
    b: &Binned,
    sums: &[Vec<f64>],
    counts: &[Vec<u32>],
    sub: Option<(&[Vec<f64>], &[Vec<u32>])>,
    total: f64,
    n: u32,
    min_leaf: u32,
) -> (Candidate, u64) {
    let mut best = leaf(total);
    let mut examined = 0u64;
    for j in 0..b.p() {
        let vals = &b.values[j];
        let mut left = 0.0;
        let mut left_n = 0u32;
        let mut last: Option<usize> = None;
        for k in 0..vals.len() {
            let (s, c) = match sub {
                None => (sums[j][k], counts[j][k]),
                Some((ss, cc)) => (ss[j][k] - sums[j][k], cc[j][k] - counts[j][k]),
            };
            if c == 0 {
                continue;
            }
            if let Some(prev) = last {
                // split between present bins `prev` and `k`
                examined += 1;
                if left_n >= min_leaf && n - left_n >= min_leaf {
                    let right = total - left;
                    let v = left.abs() + right.abs();
                    if v > best.value {
                        let threshold = 0.5 * (vals[prev] + vals[k]);
                        best = Candidate {
                            value: v,
                            tree: PolicyTree::split(j, threshold, leaf(left).tree, leaf(right).tree),
                        };
                    }
                }
            }
            left += s;
            left_n += c;
            last = Some(k);
        }
    }
    (best, examined)
}

/// Node's best depth ≤ 1 subtree, building histograms from scratch.
pub(crate) fn best_depth1_of(b: &Binned, rewards: &[f64], units: &[usize], min_leaf: u32) -> (Candidate, u64) {
    let mut h = Hist::empty(b);
    let mut total = 0.0;
    for &i in units {
        h.add(b, i, rewards[i]);
        total += rewards[i];
    }
    best_depth1(b, &h.sum, &h.count, None, total, units.len() as u32, min_leaf)
}

fn sorted_by_feature(b: &Binned, units: &[usize], j: usize) -> Vec<usize> {
    let mut order = units.to_vec();
    order.sort_by_key(|&i| (b.bins[j][i], i));
    order
}

/// Best root split on feature `j` with depth ≤ 1 children (incremental sweep).
fn best_depth2_on_feature(b: &Binned, rewards: &[f64], units: &[usize], node: &Hist, total: f64, j: usize) -> (Option<Candidate>, u64) {
    let order = sorted_by_feature(b, units, j);
    let n = units.len() as u32;
    let mut left = Hist::empty(b);
    let mut left_sum = 0.0;
    let mut best: Option<Candidate> = None;
    let mut examined = 0u64;
    let mut pos = 0;
    while pos < order.len() {
        let bin = b.bins[j][order[pos]];
        while pos < order.len() && b.bins[j][order[pos]] == bin {
            let i = order[pos];
            left.add(b, i, rewards[i]);
            left_sum += rewards[i];
            pos += 1;
        }
        if pos == order.len() {
            break;
        }
        examined += 1;
        let next = b.bins[j][order[pos]];
        let ln = pos as u32;
        let (lc, le) = best_depth1(b, &left.sum, &left.count, None, left_sum, ln, 1);
        let (rc, re) = best_depth1(b, &left.sum, &left.count, Some((&node.sum, &node.count)), total - left_sum, n - ln, 1);
        examined += le + re;
        let v = lc.value + rc.value;
        if best.as_ref().is_none_or(|c| v > c.value) {
            let threshold = 0.5 * (b.values[j][bin as usize] + b.values[j][next as usize]);
            best = Some(Candidate { value: v, tree: PolicyTree::split(j, threshold, lc.tree, rc.tree) });
        }
    }
    (best, examined)
}

/// Best root split on feature `j` with depth ≤ `depth − 1` children (generic recursion).
fn best_deep_on_feature(b: &Binned, rewards: &[f64], units: &[usize], depth: usize, j: usize) -> (Option<Candidate>, u64) {
    let order = sorted_by_feature(b, units, j);
    let mut best: Option<Candidate> = None;
    let mut examined = 0u64;
    for pos in 1..order.len() {
        let (a, c) = (b.bins[j][order[pos - 1]], b.bins[j][order[pos]]);
        if a == c {
            continue;
        }
        examined += 1;
        let (lc, le) = search(b, rewards, &order[..pos], depth - 1);
        let (rc, re) = search(b, rewards, &order[pos..], depth - 1);
        examined += le + re;
        let v = lc.value + rc.value;
        if best.as_ref().is_none_or(|x| v > x.value) {
            let threshold = 0.5 * (b.values[j][a as usize] + b.values[j][c as usize]);
            best = Some(Candidate { value: v, tree: PolicyTree::split(j, threshold, lc.tree, rc.tree) });
        }
    }
    (best, examined)
}

/// Exhaustive search for the best tree of depth ≤ `depth` over `units`.
pub(crate) fn search(b: &Binned, rewards: &[f64], units: &[usize], depth: usize) -> (Candidate, u64) {
    match depth {
        0 => (leaf(units.iter().map(|&i| rewards[i]).sum()), 0),
        1 => best_depth1_of(b, rewards, units, 1),
        _ => {
            let mut node = Hist::empty(b);
            let mut total = 0.0;
            for &i in units {
                node.add(b, i, rewards[i]);
                total += rewards[i];
            }
            let mut best = leaf(total);
            let mut examined = 0;
            for j in 0..b.p() {
                let (c, e) = if depth == 2 {
                    best_depth2_on_feature(b, rewards, units, &node, total, j)
                } else {
                    best_deep_on_feature(b, rewards, units, depth, j)
                };
                examined += e;
                if let Some(c) = c {
                    if c.value > best.value {
                        best = c;
                    }
                }
            }
            (best, examined)
        }
    }
}

/// Root-level search parallelized over features. Reduction keeps the
/// sequential scan order, so the result does not depend on scheduling.
pub(crate) fn search_root(b: &Binned, rewards: &[f64], depth: usize) -> (Candidate, u64) {
    let units: Vec<usize> = (0..rewards.len()).collect();
    if depth <= 1 {
        return search(b, rewards, &units, depth);
    }
    let mut node = Hist::empty(b);
    let mut total = 0.0;
    for &i in &units {
        node.add(b, i, rewards[i]);
        total += rewards[i];
    }
    let per_feature: Vec<(Option<Candidate>, u64)> = (0..b.p())
        .into_par_iter()
        .map(|j| {
            if depth == 2 {
                best_depth2_on_feature(b, rewards, &units, &node, total, j)
            } else {
                best_deep_on_feature(b, rewards, &units, depth, j)
            }
        })
        .collect();
    let mut best = leaf(total);
    let mut examined = 0;
    for (c, e) in per_feature {
        examined += e;
        if let Some(c) = c {
            if c.value > best.value {
                best = c;
            }
        }
    }
    (best, examined)
}
