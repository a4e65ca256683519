//! Weighted-logit targeting rule: classify the sign of the net reward with
//! each unit weighted by the reward's magnitude.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{logit_irls, Design, IrlsOptions};

/// Ridge penalty on standardized coefficients (weights are normalized to mean one).
const RIDGE: f64 = 1e-4;
/// Linear predictors beyond this magnitude signal (quasi-)separation.
const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogitSpec {
    /// Raw features.
    #[default]
    Baseline,
    /// Raw features, squares of non-binary features, and pairwise interactions.
    Flexible,
}

/// Linear treatment rule: treat iff `intercept + Σ coef·(term − mean)/scale > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRule {
    pub features: Vec<String>,
    pub spec: LogitSpec,
    /// Expanded terms as index lists into `features` (one index = raw, two = product).
    terms: Vec<Vec<usize>>,
    pub term_names: Vec<String>,
    means: Vec<f64>,
    scales: Vec<f64>,
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    coef: Vec<f64>,
    /// Set when the fit hit (quasi-)separation or fell back to a constant rule.
    pub separation_warning: bool,
}

impl LinearRule {
    fn constant(features: &[String], spec: LogitSpec, action: i8, warn: bool) -> Self {
        LinearRule {
            features: features.to_vec(),
            spec,
            terms: vec![],
            term_names: vec![],
            means: vec![],
            scales: vec![],
            intercept: if action == 1 { 1.0 } else { -1.0 },
            coefficients: BTreeMap::new(),
            coef: vec![],
            separation_warning: warn,
        }
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let mut s = self.intercept;
        for (t, term) in self.terms.iter().enumerate() {
            let raw: f64 = term.iter().map(|&j| x[j]).product();
            s += self.coef[t] * (raw - self.means[t]) / self.scales[t];
        }
        s
    }

    pub fn predict(&self, x: &[f64]) -> i8 {
        if self.score(x) > 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }
}

fn expand(features: &[Vec<f64>], names: &[String], spec: LogitSpec) -> (Vec<Vec<usize>>, Vec<String>) {
    let p = names.len();
    let mut terms: Vec<Vec<usize>> = (0..p).map(|j| vec![j]).collect();
    let mut tnames: Vec<String> = names.to_vec();
    if spec == LogitSpec::Flexible {
        for j in 0..p {
            let binary = features.iter().all(|x| x[j] == 0.0 || x[j] == 1.0);
            if !binary {
                terms.push(vec![j, j]);
                tnames.push(format!("{}^2", names[j]));
            }
        }
        for a in 0..p {
            for b in (a + 1)..p {
                terms.push(vec![a, b]);
                tnames.push(format!("{}*{}", names[a], names[b]));
            }
        }
    }
    (terms, tnames)
}

pub(crate) fn fit(rewards: &[f64], features: &[Vec<f64>], names: &[String], spec: LogitSpec) -> Result<LinearRule> {
    let n = rewards.len();
    let any_pos = rewards.iter().any(|&r| r > 0.0);
    let any_neg = rewards.iter().any(|&r| r < 0.0);
    if !any_pos {
        return Ok(LinearRule::constant(names, spec, -1, false));
    }
    if !any_neg {
        return Ok(LinearRule::constant(names, spec, 1, false));
    }
    let (mut terms, mut tnames) = expand(features, names, spec);
    // Standardize; constant terms carry no information and are dropped.
    let mut means = Vec::new();
    let mut scales = Vec::new();
    let mut keep = Vec::new();
    for (t, term) in terms.iter().enumerate() {
        let col: Vec<f64> = features.iter().map(|x| term.iter().map(|&j| x[j]).product()).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
        if sd > 0.0 {
            keep.push(t);
            means.push(m);
            scales.push(sd);
        }
    }
    terms = keep.iter().map(|&t| terms[t].clone()).collect();
    tnames = keep.iter().map(|&t| tnames[t].clone()).collect();

    let mut cols = vec!["(intercept)".to_string()];
    cols.extend(tnames.iter().cloned());
    let mut x = Design::with_capacity(cols, n);
    for xi in features {
        let mut row = vec![1.0];
        for (t, term) in terms.iter().enumerate() {
            let raw: f64 = term.iter().map(|&j| xi[j]).product();
            row.push((raw - means[t]) / scales[t]);
        }
        x.push_row(&row);
    }
    let wsum: f64 = rewards.iter().map(|r| r.abs()).sum();
    let w: Vec<f64> = rewards.iter().map(|r| r.abs() * n as f64 / wsum).collect();
    let y: Vec<f64> = rewards.iter().map(|&r| f64::from(u8::from(r > 0.0))).collect();
    let opts = IrlsOptions { ridge: RIDGE, max_iter: 200, ..IrlsOptions::default() };
    let fallback = || {
        let total: f64 = rewards.iter().sum();
        LinearRule::constant(names, spec, if total > 0.0 { 1 } else { -1 }, true)
    };
    let fit = match logit_irls(&x, &y, &w, opts) {
        Ok(f) => f,
        Err(Error::Numerical(_)) => return Ok(fallback()),
        Err(e) => return Err(e),
    };
    let max_eta = (0..n)
        .map(|i| x.row(i).iter().zip(&fit.coef).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max);
    let coefficients = tnames.iter().cloned().zip(fit.coef[1..].iter().copied()).collect();
    Ok(LinearRule {
        features: names.to_vec(),
        spec,
        terms,
        term_names: tnames,
        means,
        scales,
        intercept: fit.coef[0],
        coefficients,
        coef: fit.coef[1..].to_vec(),
        separation_warning: max_eta > SEPARATION_ETA,
    })
}
