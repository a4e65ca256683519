//! Policy value and gains over the all-treat, no-treat and random benchmarks,
//! in-sample, K-fold cross-validated, and transferred to a second sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_folds, Dataset};
use crate::error::{Error, Result};
use crate::linalg::mean_se;
use crate::nuisance::{nuisance_predictions, FittedNuisance, NuisanceSpec};
use crate::policy::{learn, LearnerSpec, Rule};
use crate::scores::{aipw_pair, compute_aipw, Estimate, ScoreSet};

/// Default fold count for cross-validated evaluation.
pub const DEFAULT_FOLDS: usize = 20;

/// Per-unit contributions behind each estimator, kept for pooling across folds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Contributions {
    pub value: Vec<f64>,
    pub vs_all: Vec<f64>,
    pub vs_none: Vec<f64>,
    pub vs_random: Vec<f64>,
}

impl Contributions {
    fn extend(&mut self, other: &Contributions) {
        self.value.extend_from_slice(&other.value);
        self.vs_all.extend_from_slice(&other.vs_all);
        self.vs_none.extend_from_slice(&other.vs_none);
        self.vs_random.extend_from_slice(&other.vs_random);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDetail {
    pub fold: usize,
    pub n: usize,
    pub share_treated: f64,
    pub value: Estimate,
    pub vs_all: Estimate,
    pub vs_none: Estimate,
    pub vs_random: Estimate,
}

/// Value of a rule and its gains over the three benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub outcome: String,
    pub n: usize,
    pub share_treated: f64,
    /// P̂: expected outcome net of cost under the rule.
    pub value: Estimate,
    /// Q̂₁: gain over treating everyone.
    pub vs_all: Estimate,
    /// Q̂₋₁: gain over treating no one.
    pub vs_none: Estimate,
    /// Q̂ᵣ: gain over random assignment with probability one half.
    pub vs_random: Estimate,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub folds: Vec<FoldDetail>,
    #[serde(skip)]
    pub contributions: Contributions,
}

fn contributions(scores: &ScoreSet, actions: &[i8], cost: f64) -> Contributions {
    let n = scores.len();
    let mut c = Contributions {
        value: Vec::with_capacity(n),
        vs_all: Vec::with_capacity(n),
        vs_none: Vec::with_capacity(n),
        vs_random: Vec::with_capacity(n),
    };
    for (i, &a) in actions.iter().enumerate() {
        let net = scores.gamma[i] - cost;
        let treat = a == 1;
        c.value.push(if treat { scores.gamma_treated[i] - cost } else { scores.gamma_control[i] });
        c.vs_all.push(if treat { 0.0 } else { -net });
        c.vs_none.push(if treat { net } else { 0.0 });
        c.vs_random.push(f64::from(a) * net / 2.0);
    }
    c
}

fn estimate(v: &[f64]) -> Estimate {
    let (estimate, se) = mean_se(v);
    Estimate { estimate, se }
}

/// Sample-analog estimates of P, Q₁, Q₋₁, Qᵣ for fixed assignments.
///
/// Every SE is the standard deviation of the per-unit contributions over √N.
pub fn evaluate(scores: &ScoreSet, actions: &[i8], cost: f64) -> Result<ValueReport> {
    if actions.len() != scores.len() {
        return Err(Error::validation(format!(
            "{} assignments for {} scores",
            actions.len(),
            scores.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::validation("cannot evaluate a rule on zero units"));
    }
    if actions.iter().any(|&a| a != 1 && a != -1) {
        return Err(Error::validation("assignments must be -1 or +1"));
    }
    let c = contributions(scores, actions, cost);
    let treated = actions.iter().filter(|&&a| a == 1).count();
    Ok(ValueReport {
        outcome: scores.outcome.clone(),
        n: scores.len(),
        share_treated: treated as f64 / scores.len() as f64,
        value: estimate(&c.value),
        vs_all: estimate(&c.vs_all),
        vs_none: estimate(&c.vs_none),
        vs_random: estimate(&c.vs_random),
        folds: vec![],
        contributions: c,
    })
}

/// Everything the cross-validation loop needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossValConfig {
    pub outcome: String,
    pub learner: LearnerSpec,
    pub nuisance: NuisanceSpec,
    pub folds: usize,
    pub seed: u64,
    /// Cost used in evaluation; `None` uses the dataset's cost. Set 0 for non-monetary outcomes.
    pub eval_cost: Option<f64>,
    /// Learn on these features only (`None` = all).
    pub features: Option<Vec<String>>,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        CrossValConfig {
            outcome: crate::data::PRIMARY_OUTCOME.to_string(),
            learner: LearnerSpec::default(),
            nuisance: NuisanceSpec::default(),
            folds: DEFAULT_FOLDS,
            seed: 0,
            eval_cost: None,
            features: None,
        }
    }
}

struct FoldResult {
    test: Vec<usize>,
    actions: Vec<i8>,
    contributions: Contributions,
    detail: FoldDetail,
}

/// Fits nuisances on `train`, then scores both the training units and the
/// held-out units with those models.
fn fold_scores(dataset: &Dataset, train: &[usize], test: &[usize], cfg: &CrossValConfig, fold: usize) -> Result<(ScoreSet, ScoreSet)> {
    let tr = dataset.subset(train)?;
    let fold_seed = cfg.seed.wrapping_add(1 + fold as u64);
    let train_preds = nuisance_predictions(&tr, &cfg.nuisance, &cfg.outcome, fold_seed)?;
    let train_scores = compute_aipw(&tr, &train_preds, &cfg.outcome)?;
    let fitted = FittedNuisance::fit(&tr, &cfg.nuisance, &cfg.outcome)?;
    // A held-out fold may lack one arm, so it is scored unit by unit rather than as a Dataset.
    let schema = dataset.schema();
    let y = dataset.outcome(&cfg.outcome)?;
    let mut s = ScoreSet {
        outcome: cfg.outcome.clone(),
        ids: Vec::with_capacity(test.len()),
        gamma_treated: Vec::with_capacity(test.len()),
        gamma_control: Vec::with_capacity(test.len()),
        gamma: Vec::with_capacity(test.len()),
        net_reward: Vec::with_capacity(test.len()),
        cost: dataset.cost(),
        cross_fitted: true,
    };
    for &i in test {
        let u = &dataset.units()[i];
        let p = fitted.propensity.predict_unit(schema, u)?;
        let (m1, m0) = fitted.outcome.predict_unit(schema, u)?;
        let (g1, g0) = aipw_pair(y[i], u.treated(), p, m1, m0);
        s.ids.push(u.id.clone());
        s.gamma_treated.push(g1);
        s.gamma_control.push(g0);
        s.gamma.push(g1 - g0);
        s.net_reward.push(g1 - g0 - dataset.cost());
    }
    Ok((train_scores, s))
}

fn learner_features(dataset: &Dataset, cfg: &CrossValConfig) -> Vec<String> {
    cfg.features.clone().unwrap_or_else(|| dataset.schema().features.clone())
}

/// K-fold out-of-sample evaluation.
///
/// For each fold the nuisance models and the rule are fitted on the other
/// K − 1 folds and the four estimators are computed on the held-out fold.
/// Reported estimates are the averages over folds; SEs come from the pooled
/// per-unit contributions of all held-out units. Folds run in parallel and
/// are merged by fold index.
pub fn cross_validate(dataset: &Dataset, cfg: &CrossValConfig) -> Result<ValueReport> {
    let folds = split_folds(dataset.len(), cfg.folds, cfg.seed)?;
    let names = learner_features(dataset, cfg);
    let x = dataset.features_named(&names)?;
    let cost = cfg.eval_cost.unwrap_or(dataset.cost());
    let results: Vec<Result<FoldResult>> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let (train, test) = folds.split(f);
            let (train_scores, test_scores) =
                fold_scores(dataset, &train, &test, cfg, f).map_err(|e| e.in_fold(f))?;
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let learned = learn(&cfg.learner, &train_scores.net_reward, &tx, &names).map_err(|e| e.in_fold(f))?;
            let actions = test.iter().map(|&i| learned.rule.predict(&x[i])).collect::<Result<Vec<_>>>()?;
            let rep = evaluate(&test_scores, &actions, cost).map_err(|e| e.in_fold(f))?;
            Ok(FoldResult {
                test,
                actions,
                detail: FoldDetail {
                    fold: f,
                    n: rep.n,
                    share_treated: rep.share_treated,
                    value: rep.value,
                    vs_all: rep.vs_all,
                    vs_none: rep.vs_none,
                    vs_random: rep.vs_random,
                },
                contributions: rep.contributions,
            })
        })
        .collect();
    let mut pooled = Contributions::default();
    let mut details = Vec::with_capacity(cfg.folds);
    for r in results {
        let r = r?;
        pooled.extend(&r.contributions);
        debug_assert_eq!(r.test.len(), r.actions.len());
        details.push(r.detail);
    }
    let k = details.len() as f64;
    let avg = |get: fn(&FoldDetail) -> f64, pooled: &[f64]| Estimate {
        estimate: details.iter().map(get).sum::<f64>() / k,
        se: mean_se(pooled).1,
    };
    Ok(ValueReport {
        outcome: cfg.outcome.clone(),
        n: dataset.len(),
        share_treated: details.iter().map(|d| d.share_treated).sum::<f64>() / k,
        value: avg(|d| d.value.estimate, &pooled.value),
        vs_all: avg(|d| d.vs_all.estimate, &pooled.vs_all),
        vs_none: avg(|d| d.vs_none.estimate, &pooled.vs_none),
        vs_random: avg(|d| d.vs_random.estimate, &pooled.vs_random),
        folds: details,
        contributions: pooled,
    })
}

/// Scores for `dataset` with nuisance models fitted on that same dataset.
pub fn score_dataset(dataset: &Dataset, spec: &NuisanceSpec, outcome: &str, seed: u64) -> Result<ScoreSet> {
    let preds = nuisance_predictions(dataset, spec, outcome, seed)?;
    compute_aipw(dataset, &preds, outcome)
}

/// Applies a frozen rule to another sample, scored with that sample's own nuisance models.
pub fn transfer_evaluate(rule: &Rule, target: &Dataset, spec: &NuisanceSpec, outcome: &str, seed: u64) -> Result<ValueReport> {
    let missing: Vec<&str> = rule
        .features()
        .iter()
        .filter(|f| target.schema().feature_index(f).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!("target sample lacks features: {}", missing.join(", "))));
    }
    let scores = score_dataset(target, spec, outcome, seed)?;
    let actions = rule.assign(target)?;
    evaluate(&scores, &actions, target.cost())
}

/// Two-sided normal-test stars: `***` p < 0.01, `**` p < 0.05, `*` p < 0.10.
pub fn stars(e: &Estimate) -> &'static str {
    let z = e.z().abs();
    if z > 2.5758293035489004 {
        "***"
    } else if z > 1.959963984540054 {
        "**"
    } else if z > 1.6448536269514722 {
        "*"
    } else {
        ""
    }
}

fn fmt_est(e: &Estimate, digits: usize) -> (String, String) {
    (format!("{:.*}{}", digits, e.estimate, stars(e)), format!("({:.*})", digits, e.se))
}

/// Aligned text table: share treated, value under the rule, and gains vs all/no/random treatment.
pub fn report_table(rows: &[(String, &ValueReport)], digits: usize) -> String {
    let header = ["", "share treated", "value", "vs all-treat", "vs no-treat", "vs random"];
    let mut cells: Vec<[String; 6]> = vec![header.map(String::from)];
    for (label, r) in rows {
        let (v, vse) = fmt_est(&r.value, digits);
        let (a, ase) = fmt_est(&r.vs_all, digits);
        let (b, bse) = fmt_est(&r.vs_none, digits);
        let (c, cse) = fmt_est(&r.vs_random, digits);
        cells.push([label.clone(), format!("{:.*}", digits.max(2), r.share_treated), v, a, b, c]);
        cells.push([String::new(), String::new(), vse, ase, bse, cse]);
    }
    let widths: Vec<usize> = (0..6).map(|j| cells.iter().map(|r| r[j].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &cells {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{:<w$}", c, w = widths[j]) } else { format!("{:>w$}", c, w = widths[j]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out.push_str("*** p<0.01, ** p<0.05, * p<0.10 (two-sided normal test); standard errors in parentheses\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(g1: &[f64], g0: &[f64], cost: f64) -> ScoreSet {
        let gamma: Vec<f64> = g1.iter().zip(g0).map(|(a, b)| a - b).collect();
        ScoreSet {
            outcome: "y".into(),
            ids: (0..g1.len()).map(|i| i.to_string()).collect(),
            gamma_treated: g1.to_vec(),
            gamma_control: g0.to_vec(),
            net_reward: gamma.iter().map(|g| g - cost).collect(),
            gamma,
            cost,
            cross_fitted: false,
        }
    }

    #[test]
    fn constant_rules_collapse() {
        let s = scores(&[5.0, 3.0, 8.0], &[1.0, 4.0, 2.0], 1.16);
        let all = evaluate(&s, &[1, 1, 1], 1.16).unwrap();
        assert_eq!(all.vs_all.estimate, 0.0);
        assert!((all.value.estimate - (16.0 / 3.0 - 1.16)).abs() < 1e-12);
        let none = evaluate(&s, &[-1, -1, -1], 1.16).unwrap();
        assert_eq!(none.vs_none.estimate, 0.0);
        assert!((none.value.estimate - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_unit_example() {
        // Γ − c = (1, −1), π = (+1, −1)
        let s = scores(&[2.0, 0.0], &[0.0, 0.0], 1.0);
        let r = evaluate(&s, &[1, -1], 1.0).unwrap();
        assert_eq!(r.vs_all.estimate, 0.5);
        assert_eq!(r.vs_none.estimate, 0.5);
        assert_eq!(r.vs_random.estimate, 0.5);
        assert_eq!(r.share_treated, 0.5);
    }

    #[test]
    fn misaligned_lengths() {
        let s = scores(&[2.0, 0.0], &[0.0, 0.0], 1.0);
        assert!(matches!(evaluate(&s, &[1], 1.0), Err(Error::Validation(_))));
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(&Estimate { estimate: 2.14, se: 0.82 }), "***");
        assert_eq!(stars(&Estimate { estimate: 0.0, se: 0.3 }), "");
        assert_eq!(stars(&Estimate { estimate: 0.1, se: 0.0 }), "***");
        assert_eq!(stars(&Estimate { estimate: 0.025, se: 0.010 }), "**");
        assert_eq!(stars(&Estimate { estimate: 0.014, se: 0.008 }), "*");
    }

    #[test]
    fn table_renders_stars_and_se() {
        let s = scores(&[5.0, 3.0, 8.0, 1.0], &[1.0, 4.0, 2.0, 1.5], 1.16);
        let r = evaluate(&s, &[1, -1, 1, -1], 1.16).unwrap();
        let t = report_table(&[("rule".into(), &r)], 2);
        assert!(t.contains("share treated") && t.contains("0.50") && t.contains('('), "{t}");
    }

    proptest! {
        #[test]
        fn gain_identities(
            data in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, any::<bool>()), 1..60),
            cost in 0.0f64..5.0,
        ) {
            let g1: Vec<f64> = data.iter().map(|d| d.0).collect();
            let g0: Vec<f64> = data.iter().map(|d| d.1).collect();
            let acts: Vec<i8> = data.iter().map(|d| if d.2 { 1 } else { -1 }).collect();
            let s = scores(&g1, &g0, cost);
            let r = evaluate(&s, &acts, cost).unwrap();
            let none = evaluate(&s, &vec![-1; acts.len()], cost).unwrap();
            let scale = 1.0 + r.value.estimate.abs() + r.vs_all.estimate.abs() + r.vs_none.estimate.abs();
            prop_assert!((r.vs_random.estimate - (r.vs_all.estimate + r.vs_none.estimate) / 2.0).abs() <= 1e-12 * scale);
            prop_assert!((r.value.estimate - none.value.estimate - r.vs_none.estimate).abs() <= 1e-12 * scale);
        }

        #[test]
        fn permutation_invariance(
            data in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 2..30),
            rot in 0usize..30,
        ) {
            let g1: Vec<f64> = data.iter().map(|d| d.0).collect();
            let g0: Vec<f64> = data.iter().map(|d| d.1).collect();
            let acts: Vec<i8> = data.iter().map(|d| if d.2 { 1 } else { -1 }).collect();
            let a = evaluate(&scores(&g1, &g0, 1.0), &acts, 1.0).unwrap();
            let k = rot % data.len();
            let rotate = |v: &[f64]| { let mut w = v.to_vec(); w.rotate_left(k); w };
            let mut ra = acts.clone();
            ra.rotate_left(k);
            let b = evaluate(&scores(&rotate(&g1), &rotate(&g0), 1.0), &ra, 1.0).unwrap();
            prop_assert!((a.vs_random.estimate - b.vs_random.estimate).abs() < 1e-12);
            prop_assert!((a.value.se - b.value.se).abs() < 1e-12);
        }
    }
}
