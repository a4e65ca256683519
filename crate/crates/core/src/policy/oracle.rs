//! Naive full-enumeration reference for the exact tree search.
//!
//! Shares nothing with the histogram search: every node tries both leaf
//! actions and every (feature, midpoint threshold) pair, partitions the units
//! explicitly and sums rewards directly. Only meant for small instances.

use super::tree::PolicyTree;
use crate::error::{Error, Result};

pub const MAX_UNITS: usize = 300;
pub const MAX_FEATURES: usize = 4;
pub const MAX_DEPTH: usize = 2;

/// Optimal objective `(1/2N) Σ π(xᵢ) rᵢ` and one tree attaining it.
pub fn brute_force_oracle(rewards: &[f64], features: &[Vec<f64>], depth: usize) -> Result<(f64, PolicyTree)> {
    let n = rewards.len();
    if n == 0 || features.len() != n {
        return Err(Error::validation("oracle needs non-empty, aligned rewards and features"));
    }
    let p = features[0].len();
    if n > MAX_UNITS || p > MAX_FEATURES || depth > MAX_DEPTH {
        return Err(Error::validation(format!(
            "oracle size guard: N <= {MAX_UNITS}, features <= {MAX_FEATURES}, depth <= {MAX_DEPTH}"
        )));
    }
    let units: Vec<usize> = (0..n).collect();
    let (value, tree) = enumerate(rewards, features, &units, depth);
    Ok((value / (2.0 * n as f64), tree))
}

fn enumerate(rewards: &[f64], features: &[Vec<f64>], units: &[usize], depth: usize) -> (f64, PolicyTree) {
    let mut best: Option<(f64, PolicyTree)> = None;
    for action in [-1i8, 1] {
        let v: f64 = units.iter().map(|&i| f64::from(action) * rewards[i]).sum();
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, PolicyTree::constant(action)));
        }
    }
    if depth > 0 {
        let p = features[0].len();
        for j in 0..p {
            let mut vals: Vec<f64> = units.iter().map(|&i| features[i][j]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let left: Vec<usize> = units.iter().copied().filter(|&i| features[i][j] <= t).collect();
                let right: Vec<usize> = units.iter().copied().filter(|&i| features[i][j] > t).collect();
                let (lv, lt) = enumerate(rewards, features, &left, depth - 1);
                let (rv, rt) = enumerate(rewards, features, &right, depth - 1);
                let v = lv + rv;
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, PolicyTree::split(j, t, lt, rt)));
                }
            }
        }
    }
    best.expect("at least the two constant leaves are enumerated")
}
