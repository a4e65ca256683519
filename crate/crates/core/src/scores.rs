//! AIPW scores and average-treatment-effect estimators.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{mean_se, ols, Design};
use crate::nuisance::{cell_labels, DesignDescription, NuisancePredictions, StratumDesign};

/// Per-unit doubly robust scores for one outcome column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub outcome: String,
    pub ids: Vec<String>,
    /// Γ(1): estimated outcome under treatment.
    pub gamma_treated: Vec<f64>,
    /// Γ(−1): estimated outcome without treatment.
    pub gamma_control: Vec<f64>,
    /// Γ = Γ(1) − Γ(−1).
    pub gamma: Vec<f64>,
    /// Γ − c.
    pub net_reward: Vec<f64>,
    pub cost: f64,
    pub cross_fitted: bool,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    /// Scores of the units at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> ScoreSet {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        ScoreSet {
            outcome: self.outcome.clone(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            gamma_treated: pick(&self.gamma_treated),
            gamma_control: pick(&self.gamma_control),
            gamma: pick(&self.gamma),
            net_reward: pick(&self.net_reward),
            cost: self.cost,
            cross_fitted: self.cross_fitted,
        }
    }

    /// Same scores with a different treatment cost.
    pub fn with_cost(&self, cost: f64) -> ScoreSet {
        ScoreSet { net_reward: self.gamma.iter().map(|g| g - cost).collect(), cost, ..self.clone() }
    }

    /// CSV with columns `id, gamma1, gamma_neg1, gamma, net_reward`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "gamma1", "gamma_neg1", "gamma", "net_reward"])?;
        for i in 0..self.len() {
            w.write_record([
                self.ids[i].clone(),
                self.gamma_treated[i].to_string(),
                self.gamma_control[i].to_string(),
                self.gamma[i].to_string(),
                self.net_reward[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R, outcome: &str, cost: f64) -> Result<ScoreSet> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let mut s = ScoreSet {
            outcome: outcome.to_string(),
            ids: vec![],
            gamma_treated: vec![],
            gamma_control: vec![],
            gamma: vec![],
            net_reward: vec![],
            cost,
            cross_fitted: false,
        };
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec.get(j)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::validation(format!("row {}: bad score value in column {j}", row + 1)))
            };
            s.ids.push(rec.get(0).unwrap_or("").to_string());
            let g1 = num(1)?;
            let g0 = num(2)?;
            s.gamma_treated.push(g1);
            s.gamma_control.push(g0);
            s.gamma.push(g1 - g0);
            s.net_reward.push(g1 - g0 - cost);
        }
        Ok(s)
    }
}

/// `(Γ(1), Γ(−1))` for a single unit.
pub(crate) fn aipw_pair(y: f64, treated: bool, p: f64, mu_treated: f64, mu_control: f64) -> (f64, f64) {
    if treated {
        (mu_treated + (y - mu_treated) / p, mu_control)
    } else {
        (mu_treated, mu_control + (y - mu_control) / (1.0 - p))
    }
}

/// AIPW scores from per-unit nuisance predictions.
///
/// `Γ(1) = μ₁ + 1{d=1}(y − μ₁)/p` and `Γ(−1) = μ₋₁ + 1{d=−1}(y − μ₋₁)/(1 − p)`.
pub fn compute_aipw(dataset: &Dataset, nuisance: &NuisancePredictions, outcome: &str) -> Result<ScoreSet> {
    let n = dataset.len();
    if nuisance.propensity.len() != n || nuisance.mu_treated.len() != n || nuisance.mu_control.len() != n {
        return Err(Error::validation("nuisance predictions are not aligned with the dataset"));
    }
    let y = dataset.outcome(outcome)?;
    let c = dataset.cost();
    let mut s = ScoreSet {
        outcome: outcome.to_string(),
        ids: dataset.units().iter().map(|u| u.id.clone()).collect(),
        gamma_treated: Vec::with_capacity(n),
        gamma_control: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        net_reward: Vec::with_capacity(n),
        cost: c,
        cross_fitted: nuisance.cross_fitted,
    };
    for (i, u) in dataset.units().iter().enumerate() {
        let p = nuisance.propensity[i];
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::numerical(format!("row {}: propensity {p} is not strictly inside (0, 1)", i + 1)));
        }
        let (g1, g0) = aipw_pair(y[i], u.treated(), p, nuisance.mu_treated[i], nuisance.mu_control[i]);
        if !(g1.is_finite() && g0.is_finite()) {
            return Err(Error::numerical(format!("row {}: non-finite AIPW score", i + 1)));
        }
        let g = g1 - g0;
        s.gamma_treated.push(g1);
        s.gamma_control.push(g0);
        s.gamma.push(g);
        s.net_reward.push(g - c);
    }
    Ok(s)
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

impl Estimate {
    pub fn z(&self) -> f64 {
        if self.se > 0.0 {
            self.estimate / self.se
        } else if self.estimate == 0.0 {
            0.0
        } else {
            self.estimate.signum() * f64::INFINITY
        }
    }
}

/// Mean of Γ with the i.i.d. score standard error.
pub fn estimate_ate_aipw(scores: &ScoreSet) -> Result<Estimate> {
    if scores.len() < 2 {
        return Err(Error::validation("ATE needs at least two scores"));
    }
    let (estimate, se) = mean_se(&scores.gamma);
    Ok(Estimate { estimate, se })
}

/// Mean of Γ − c: the ATE net of the treatment cost (same SE).
pub fn estimate_net_ate_aipw(scores: &ScoreSet) -> Result<Estimate> {
    let e = estimate_ate_aipw(scores)?;
    Ok(Estimate { estimate: e.estimate - scores.cost, se: e.se })
}

/// Regression adjustment used by [`estimate_ate_ols`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OlsControls {
    None,
    Strata(StratumDesign),
}

/// Coefficient on the treated indicator in OLS of y on {1, 1{d=1}, controls}, with HC1 SE.
pub fn estimate_ate_ols(dataset: &Dataset, controls: OlsControls, outcome: &str) -> Result<Estimate> {
    let y = dataset.outcome(outcome)?;
    let strata = match controls {
        OlsControls::None => None,
        OlsControls::Strata(kind) => Some(DesignDescription::build(dataset, kind)),
    };
    let mut names = vec!["(intercept)".to_string(), "treated".to_string()];
    if let Some(s) = &strata {
        names.extend(s.column_names().into_iter().skip(1));
    }
    let mut x = Design::with_capacity(names, dataset.len());
    for u in dataset.units() {
        let mut row = vec![1.0, f64::from(u8::from(u.treated()))];
        if let Some(s) = &strata {
            row.extend(s.design_row(&cell_labels(dataset.schema(), u))?.into_iter().skip(1));
        }
        x.push_row(&row);
    }
    let fit = ols(&x, &y)?;
    let cov = fit.hc1_covariance(&x);
    Ok(Estimate { estimate: fit.coef[1], se: cov[(1, 1)].max(0.0).sqrt() })
}
