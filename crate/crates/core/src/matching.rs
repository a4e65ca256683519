//! Caliper matching on a sample-membership score for rule-transfer analysis,
//! plus standardized-difference balance diagnostics.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, score_dataset, ValueReport};
use crate::linalg::{logit_irls, mean_sd, sigmoid, Design, IrlsOptions};
use crate::nuisance::NuisanceSpec;
use crate::policy::Rule;

/// Default caliper on the membership-probability scale.
pub const DEFAULT_RADIUS: f64 = 0.1;
/// Standardized differences above this (percent scale) are classed as large.
pub const LARGE_DIFFERENCE: f64 = 20.0;
/// Membership linear predictors beyond this magnitude mean the samples are separable.
const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub radius: f64,
    pub pairs: Vec<MatchPair>,
    pub unmatched_a: usize,
}

impl MatchResult {
    /// Distinct matched B indices, ascending.
    pub fn matched_b(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.b).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// CSV `a_id, b_id, distance`.
    pub fn write_csv<W: Write>(&self, a: &Dataset, b: &Dataset, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["a_id", "b_id", "distance"])?;
        for p in &self.pairs {
            w.write_record([a.units()[p.a].id.as_str(), b.units()[p.b].id.as_str(), &p.distance.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fitted probability of belonging to sample A, for both samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub features: Vec<String>,
    pub score_a: Vec<f64>,
    pub score_b: Vec<f64>,
}

/// Features of A that B also carries, in A's order.
pub fn shared_features(a: &Dataset, b: &Dataset) -> Vec<String> {
    a.schema().features.iter().filter(|f| b.schema().feature_index(f).is_some()).cloned().collect()
}

/// Logit of the A-membership label on the shared features of the pooled samples.
pub fn membership_scores(a: &Dataset, b: &Dataset) -> Result<Membership> {
    let features = shared_features(a, b);
    if features.is_empty() {
        return Err(Error::validation("samples share no features"));
    }
    let xa = a.features_named(&features)?;
    let xb = b.features_named(&features)?;
    let pooled: Vec<&Vec<f64>> = xa.iter().chain(&xb).collect();
    let n = pooled.len();
    let mut keep = Vec::new();
    let mut stats = Vec::new();
    for j in 0..features.len() {
        let col: Vec<f64> = pooled.iter().map(|x| x[j]).collect();
        let (m, sd) = mean_sd(&col);
        if sd > 0.0 {
            keep.push(j);
            stats.push((m, sd));
        }
    }
    let mut names = vec!["(intercept)".to_string()];
    names.extend(keep.iter().map(|&j| features[j].clone()));
    let row = |x: &Vec<f64>| {
        let mut r = vec![1.0];
        r.extend(keep.iter().zip(&stats).map(|(&j, (m, sd))| (x[j] - m) / sd));
        r
    };
    let mut design = Design::with_capacity(names, n);
    for x in &pooled {
        design.push_row(&row(x));
    }
    let y: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i < xa.len()))).collect();
    let fit = logit_irls(&design, &y, &vec![1.0; n], IrlsOptions::default())
        .map_err(|e| Error::numerical(format!("membership model failed: {e}")))?;
    let eta: Vec<f64> = (0..n).map(|i| design.row(i).iter().zip(&fit.coef).map(|(a, b)| a * b).sum()).collect();
    let perfect = eta.iter().enumerate().all(|(i, e)| (*e > 0.0) == (i < xa.len()));
    if perfect || eta.iter().any(|e| e.abs() > SEPARATION_ETA) {
        return Err(Error::numerical("membership model separates the samples; no common support to match on"));
    }
    let score: Vec<f64> = eta.into_iter().map(sigmoid).collect();
    Ok(Membership { features, score_a: score[..xa.len()].to_vec(), score_b: score[xa.len()..].to_vec() })
}

/// Nearest B neighbor of every A unit by membership-score distance, with
/// replacement, ties to the lower B index; pairs farther than `radius` dropped.
pub fn match_on_scores(score_a: &[f64], score_b: &[f64], radius: f64) -> Result<MatchResult> {
    if !(radius > 0.0) {
        return Err(Error::validation(format!("radius must be positive, got {radius}")));
    }
    if score_b.is_empty() {
        return Err(Error::validation("sample B is empty"));
    }
    let mut index: Vec<(f64, usize)> = score_b.iter().copied().zip(0..).collect();
    index.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let nearest = |s: f64| -> (usize, f64) {
        let pos = index.partition_point(|e| e.0 < s);
        let mut best: Option<(usize, f64)> = None;
        let mut consider = |k: usize| {
            let (v, b) = index[k];
            let d = (v - s).abs();
            if best.is_none_or(|(bb, bd)| d < bd || (d == bd && b < bb)) {
                best = Some((b, d));
            }
        };
        if pos < index.len() {
            // Lowest B index among the equal scores at or above `s`.
            consider(pos);
        }
        if pos > 0 {
            let below = index[pos - 1].0;
            consider(index.partition_point(|e| e.0 < below));
        }
        best.expect("B is non-empty")
    };
    let found: Vec<Option<MatchPair>> = score_a
        .par_iter()
        .enumerate()
        .map(|(a, &s)| {
            let (b, distance) = nearest(s);
            (distance <= radius).then_some(MatchPair { a, b, distance })
        })
        .collect();
    let unmatched_a = found.iter().filter(|p| p.is_none()).count();
    Ok(MatchResult { radius, pairs: found.into_iter().flatten().collect(), unmatched_a })
}

/// B units lying within `radius` of at least one A unit's membership score, ascending.
///
/// This is the B sample that the caliper retains: it grows with the radius,
/// is all of B at radius ∞, and is all of B whenever B reproduces A.
pub fn caliper_support_b(score_a: &[f64], score_b: &[f64], radius: f64) -> Vec<usize> {
    if radius.is_infinite() {
        return (0..score_b.len()).collect();
    }
    let mut sorted = score_a.to_vec();
    sorted.sort_by(f64::total_cmp);
    (0..score_b.len())
        .filter(|&j| {
            let s = score_b[j];
            let pos = sorted.partition_point(|&v| v < s);
            let near = |k: usize| (sorted[k] - s).abs() <= radius;
            (pos < sorted.len() && near(pos)) || (pos > 0 && near(pos - 1))
        })
        .collect()
}

/// Caliper matching of A units to B units on the estimated membership score.
pub fn caliper_match(a: &Dataset, b: &Dataset, radius: f64) -> Result<MatchResult> {
    let m = membership_scores(a, b)?;
    match_on_scores(&m.score_a, &m.score_b, radius)
}

fn is_binary(values: &[f64]) -> bool {
    values.iter().all(|&v| v == 0.0 || v == 1.0)
}

/// `100·|m_A − m_B| / sqrt((s²_A + s²_B)/2)`, with `p(1 − p)` variances for
/// 0/1 data; `+∞` when the pooled variance is zero but the means differ.
pub fn standardized_difference_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("standardized difference needs non-empty samples"));
    }
    let var = |v: &[f64]| {
        let (m, sd) = mean_sd(v);
        if is_binary(a) && is_binary(b) {
            (m, m * (1.0 - m))
        } else {
            (m, if sd.is_finite() { sd * sd } else { 0.0 })
        }
    };
    let (ma, va) = var(a);
    let (mb, vb) = var(b);
    let pooled = ((va + vb) / 2.0).sqrt();
    let diff = (ma - mb).abs();
    if pooled > 0.0 {
        Ok(100.0 * diff / pooled)
    } else if diff == 0.0 {
        Ok(0.0)
    } else {
        Ok(f64::INFINITY)
    }
}

pub fn standardized_difference(a: &Dataset, b: &Dataset, feature: &str) -> Result<f64> {
    let col = |d: &Dataset| -> Result<Vec<f64>> {
        let j = d
            .schema()
            .feature_index(feature)
            .ok_or_else(|| Error::validation(format!("feature `{feature}` missing from a sample")))?;
        Ok(d.units().iter().map(|u| u.x[j]).collect())
    };
    standardized_difference_values(&col(a)?, &col(b)?)
}

/// Standardized difference over matched pairs (B units counted once per pair).
pub fn matched_standardized_difference(a: &Dataset, b: &Dataset, m: &MatchResult, feature: &str) -> Result<f64> {
    let ja = a.schema().feature_index(feature).ok_or_else(|| Error::validation(format!("feature `{feature}` missing from A")))?;
    let jb = b.schema().feature_index(feature).ok_or_else(|| Error::validation(format!("feature `{feature}` missing from B")))?;
    let va: Vec<f64> = m.pairs.iter().map(|p| a.units()[p.a].x[ja]).collect();
    let vb: Vec<f64> = m.pairs.iter().map(|p| b.units()[p.b].x[jb]).collect();
    standardized_difference_values(&va, &vb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub radius: f64,
    pub matched_a: usize,
    pub matched_b: usize,
    /// `None` (and `empty`) when nothing could be evaluated at this radius.
    pub report: Option<ValueReport>,
    pub empty: bool,
}

/// Evaluates `rule` on the B units retained by the caliper at each radius
/// (see [`caliper_support_b`]). B is scored once with its own nuisance
/// models; each entry averages those scores over the retained subset, so the
/// radius-∞ entry equals `transfer_evaluate` on all of B.
pub fn transfer_with_radius_sweep(
    rule: &Rule,
    a: &Dataset,
    b: &Dataset,
    radii: &[f64],
    spec: &NuisanceSpec,
    outcome: &str,
    seed: u64,
) -> Result<Vec<SweepEntry>> {
    let membership = membership_scores(a, b)?;
    let scores = score_dataset(b, spec, outcome, seed)?;
    let actions = rule.assign(b)?;
    radii
        .iter()
        .map(|&radius| {
            let m = match_on_scores(&membership.score_a, &membership.score_b, radius)?;
            let idx = caliper_support_b(&membership.score_a, &membership.score_b, radius);
            let report = if idx.is_empty() {
                None
            } else {
                let sub_actions: Vec<i8> = idx.iter().map(|&i| actions[i]).collect();
                Some(evaluate(&scores.subset(&idx), &sub_actions, b.cost())?)
            };
            Ok(SweepEntry { radius, matched_a: m.pairs.len(), matched_b: idx.len(), empty: report.is_none(), report })
        })
        .collect()
}

/// Sweep results as CSV for plotting gains against the radius.
pub fn write_sweep_csv<W: Write>(entries: &[SweepEntry], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "radius", "matched_a", "matched_b", "share_treated", "value", "value_se", "vs_all", "vs_all_se", "vs_none",
        "vs_none_se", "vs_random", "vs_random_se", "empty",
    ])?;
    for e in entries {
        let mut rec = vec![e.radius.to_string(), e.matched_a.to_string(), e.matched_b.to_string()];
        match &e.report {
            Some(r) => {
                rec.push(r.share_treated.to_string());
                for est in [r.value, r.vs_all, r.vs_none, r.vs_random] {
                    rec.push(est.estimate.to_string());
                    rec.push(est.se.to_string());
                }
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 9)),
        }
        rec.push(e.empty.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::transfer_evaluate;
    use crate::synthetic::{generate, two_group_spec, FeatureDist};

    #[test]
    fn hand_distance_beyond_caliper() {
        let m = match_on_scores(&[0.8, 0.55], &[0.6, 0.3], 0.1).unwrap();
        assert_eq!(m.unmatched_a, 1);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].a, 1);
        assert_eq!(m.pairs[0].b, 0);
        assert!(m.pairs.iter().all(|p| p.distance <= 0.1));
    }

    #[test]
    fn ties_go_to_lower_b_index() {
        let m = match_on_scores(&[0.5], &[0.6, 0.4, 0.4, 0.6], f64::INFINITY).unwrap();
        assert_eq!(m.pairs[0].b, 0);
        let m = match_on_scores(&[0.4], &[0.6, 0.4, 0.4], f64::INFINITY).unwrap();
        assert_eq!(m.pairs[0].b, 1);
        let m = match_on_scores(&[0.7], &[0.6, 0.6, 0.2], f64::INFINITY).unwrap();
        assert_eq!(m.pairs[0].b, 0);
    }

    #[test]
    fn identical_samples_match_exactly() {
        let (a, _) = generate(&two_group_spec(), 500, 1).unwrap();
        for r in [0.01, 0.1, f64::INFINITY] {
            let m = caliper_match(&a, &a, r).unwrap();
            assert_eq!(m.unmatched_a, 0);
            assert!(m.pairs.iter().all(|p| p.distance < 1e-12));
        }
    }

    #[test]
    fn infinite_radius_matches_everyone() {
        let (a, _) = generate(&two_group_spec(), 300, 1).unwrap();
        let (b, _) = generate(&two_group_spec(), 200, 2).unwrap();
        let m = caliper_match(&a, &b, f64::INFINITY).unwrap();
        assert_eq!(m.unmatched_a, 0);
        assert_eq!(m.pairs.len(), 300);
    }

    #[test]
    fn standardized_difference_examples() {
        // Means 1 and 0, both sds 1.
        let a = [0.0, 1.0, 2.0];
        let b = [-1.0, 0.0, 1.0];
        assert!((standardized_difference_values(&a, &b).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(standardized_difference_values(&a, &a).unwrap(), 0.0);
        assert_eq!(standardized_difference_values(&[0.0, 1.0], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.0);
        // Binary uses p(1-p): 0.5 vs 0.25 share.
        let v = standardized_difference_values(&[0.0, 1.0], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let expect = 100.0 * 0.25 / ((0.25 + 0.1875) / 2.0f64).sqrt();
        assert!((v - expect).abs() < 1e-12);
        assert_eq!(standardized_difference_values(&[2.0, 2.0], &[3.0, 3.0]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn separable_samples_are_numerical_failure() {
        let mut spec = two_group_spec();
        let (a, _) = generate(&spec, 200, 1).unwrap();
        spec.features[1].dist = FeatureDist::Uniform { lo: 100.0, hi: 109.0, levels: Some(10) };
        let (b, _) = generate(&spec, 200, 2).unwrap();
        assert!(matches!(caliper_match(&a, &b, 0.1), Err(Error::Numerical(_))));
    }

    #[test]
    fn sweep_infinite_entry_is_full_transfer() {
        let (a, _) = generate(&two_group_spec(), 1000, 1).unwrap();
        let (b, _) = generate(&two_group_spec(), 800, 2).unwrap();
        let rule = Rule::constant(1, vec!["x_group".into()]);
        let spec = NuisanceSpec::default();
        let sweep = transfer_with_radius_sweep(&rule, &a, &b, &[0.05, f64::INFINITY], &spec, "y", 0).unwrap();
        let full = transfer_evaluate(&rule, &b, &spec, "y", 0).unwrap();
        let inf = sweep[1].report.as_ref().unwrap();
        assert_eq!(inf.value, full.value);
        assert_eq!(inf.vs_none, full.vs_none);
        assert!(sweep[0].matched_b <= sweep[1].matched_b);
        let mut out = Vec::new();
        write_sweep_csv(&sweep, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }

    #[test]
    fn identical_samples_have_constant_gains() {
        let (a, _) = generate(&two_group_spec(), 600, 5).unwrap();
        let rule = Rule::constant(1, vec!["x_group".into()]);
        let sweep =
            transfer_with_radius_sweep(&rule, &a, &a, &[0.05, 0.1, f64::INFINITY], &NuisanceSpec::default(), "y", 0).unwrap();
        let v: Vec<f64> = sweep.iter().map(|e| e.report.as_ref().unwrap().vs_none.estimate).collect();
        assert!(v.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12), "{v:?}");
    }
}
