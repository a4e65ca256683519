//! Top-down greedy (CART-style) policy tree.

use super::exact::{best_depth1_of, leaf, Binned};
use super::tree::PolicyTree;
use super::objective;
use crate::data::split_folds;
use crate::error::Result;

pub const DEFAULT_MIN_LEAF: usize = 10;
pub const CV_DEPTHS: std::ops::RangeInclusive<usize> = 1..=6;
pub const CV_FOLDS: usize = 10;

/// Grows a tree node by node, taking the best single split at each node.
/// A node stays a leaf when the depth budget is spent or no split with both
/// children of at least `min_leaf` units strictly improves on the leaf.
pub(crate) fn grow(
    b: &Binned,
    rewards: &[f64],
    features: &[Vec<f64>],
    units: &[usize],
    depth: usize,
    min_leaf: usize,
) -> (PolicyTree, u64) {
    if depth == 0 {
        return (leaf(units.iter().map(|&i| rewards[i]).sum()).tree, 0);
    }
    let (cand, examined) = best_depth1_of(b, rewards, units, min_leaf.max(1) as u32);
    match cand.tree {
        PolicyTree::Split { feature, threshold, .. } => {
            let (l, r): (Vec<usize>, Vec<usize>) = units.iter().partition(|&&i| features[i][feature] <= threshold);
            let (lt, le) = grow(b, rewards, features, &l, depth - 1, min_leaf);
            let (rt, re) = grow(b, rewards, features, &r, depth - 1, min_leaf);
            (PolicyTree::split(feature, threshold, lt, rt).simplify(), examined + le + re)
        }
        leaf_tree => (leaf_tree, examined),
    }
}

pub(crate) fn fit(rewards: &[f64], features: &[Vec<f64>], depth: usize, min_leaf: usize) -> (PolicyTree, u64) {
    let p = features.first().map_or(0, Vec::len);
    let b = Binned::new(features, p);
    let units: Vec<usize> = (0..rewards.len()).collect();
    grow(&b, rewards, features, &units, depth, min_leaf)
}

/// Depth in `CV_DEPTHS` with the highest summed out-of-fold `Σ π·r / 2`; ties go to the shallower tree.
pub(crate) fn select_depth(rewards: &[f64], features: &[Vec<f64>], min_leaf: usize, seed: u64) -> Result<usize> {
    let n = rewards.len();
    if n < CV_FOLDS {
        return Ok(*CV_DEPTHS.start());
    }
    let folds = split_folds(n, CV_FOLDS, seed)?;
    let mut best = (f64::NEG_INFINITY, *CV_DEPTHS.start());
    for depth in CV_DEPTHS {
        let mut total = 0.0;
        for f in 0..CV_FOLDS {
            let (train, test) = folds.split(f);
            let tr: Vec<f64> = train.iter().map(|&i| rewards[i]).collect();
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
            let (tree, _) = fit(&tr, &tx, depth, min_leaf);
            let hr: Vec<f64> = test.iter().map(|&i| rewards[i]).collect();
            let actions: Vec<i8> = test.iter().map(|&i| tree.predict(&features[i])).collect();
            total += objective(&hr, &actions) * hr.len() as f64;
        }
        if total > best.0 {
            best = (total, depth);
        }
    }
    Ok(best.1)
}
