//! Propensity score and conditional outcome-mean models over the stratum design.
//!
//! Models are keyed by stratum *labels*, not dense codes, so a fitted model
//! can be serialized and re-applied to any dataset that uses the same labels.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_folds, Dataset, Schema, Unit};
use crate::error::{Error, Result};
use crate::linalg::{logit_irls, ols, sigmoid, Design, IrlsOptions};

/// Default clipping floor for propensity predictions.
pub const DEFAULT_FLOOR: f64 = 0.01;

/// Which stratum columns enter the nuisance design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StratumDesign {
    /// Intercept plus one dummy per non-reference level of each stratum variable.
    #[default]
    MainEffects,
    /// Intercept plus one dummy per non-reference joint cell.
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Column {
    Intercept,
    Level { var: usize, label: String },
    Cell { labels: Vec<String> },
}

/// Expanded design: which dummies exist, plus the levels/cells seen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDescription {
    pub kind: StratumDesign,
    pub stratum_names: Vec<String>,
    columns: Vec<Column>,
    known_levels: Vec<BTreeSet<String>>,
    known_cells: BTreeSet<Vec<String>>,
}

/// Joint cell of a unit as raw labels.
pub fn cell_labels(schema: &Schema, unit: &Unit) -> Vec<String> {
    unit.z.iter().zip(&schema.strata).map(|(&c, v)| v.labels[c as usize].clone()).collect()
}

/// Human-readable cell name, e.g. `z_region=A,z_size=2`.
pub fn cell_name(names: &[String], labels: &[String]) -> String {
    if names.is_empty() {
        return "(single cell)".to_string();
    }
    names.iter().zip(labels).map(|(n, l)| format!("{n}={l}")).collect::<Vec<_>>().join(",")
}

impl DesignDescription {
    pub fn build(dataset: &Dataset, kind: StratumDesign) -> Self {
        let schema = dataset.schema();
        let nvar = schema.strata.len();
        let mut levels: Vec<Vec<String>> = vec![Vec::new(); nvar];
        let mut known_levels = vec![BTreeSet::new(); nvar];
        let mut cells: Vec<Vec<String>> = Vec::new();
        let mut known_cells = BTreeSet::new();
        for u in dataset.units() {
            let labels = cell_labels(schema, u);
            for (v, l) in labels.iter().enumerate() {
                if known_levels[v].insert(l.clone()) {
                    levels[v].push(l.clone());
                }
            }
            if known_cells.insert(labels.clone()) {
                cells.push(labels);
            }
        }
        let mut columns = vec![Column::Intercept];
        match kind {
            StratumDesign::MainEffects => {
                for (v, lv) in levels.iter_mut().enumerate() {
                    // Reference level = lowest code present, which keeps the design independent of row order.
                    lv.sort_by_key(|l| schema.strata[v].labels.iter().position(|x| x == l));
                    for l in lv.iter().skip(1) {
                        columns.push(Column::Level { var: v, label: l.clone() });
                    }
                }
            }
            StratumDesign::Saturated => {
                cells.sort();
                for c in cells.iter().skip(1) {
                    columns.push(Column::Cell { labels: c.clone() });
                }
            }
        }
        DesignDescription {
            kind,
            stratum_names: schema.strata.iter().map(|v| v.name.clone()).collect(),
            columns,
            known_levels,
            known_cells,
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .map(|c| match c {
                Column::Intercept => "(intercept)".to_string(),
                Column::Level { var, label } => format!("{}={}", self.stratum_names[*var], label),
                Column::Cell { labels } => cell_name(&self.stratum_names, labels),
            })
            .collect()
    }

    /// Design row for a cell given as raw labels.
    pub fn design_row(&self, labels: &[String]) -> Result<Vec<f64>> {
        match self.kind {
            StratumDesign::MainEffects => {
                for (v, l) in labels.iter().enumerate() {
                    if !self.known_levels[v].contains(l) {
                        return Err(Error::validation(format!(
                            "stratum level {}={} was not present when the model was fitted",
                            self.stratum_names[v], l
                        )));
                    }
                }
            }
            StratumDesign::Saturated => {
                if !self.known_cells.contains(labels) {
                    return Err(Error::validation(format!(
                        "stratum cell {} was not present when the model was fitted",
                        cell_name(&self.stratum_names, labels)
                    )));
                }
            }
        }
        Ok(self
            .columns
            .iter()
            .map(|c| match c {
                Column::Intercept => 1.0,
                Column::Level { var, label } => f64::from(u8::from(&labels[*var] == label)),
                Column::Cell { labels: cell } => f64::from(u8::from(cell.as_slice() == labels)),
            })
            .collect())
    }

    fn matrix(&self, dataset: &Dataset, rows: impl Iterator<Item = usize>) -> Result<Design> {
        let mut d = Design::new(self.column_names());
        for i in rows {
            let u = &dataset.units()[i];
            d.push_row(&self.design_row(&cell_labels(dataset.schema(), u))?);
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum PropensitySource {
    Logit { design: DesignDescription, coefficients: Vec<f64> },
    /// Known assignment probability per cell, keyed by `cell_name`.
    Population { stratum_names: Vec<String>, table: BTreeMap<String, f64> },
}

/// Fitted propensity score `p(z) = Pr(D = 1 | Z = z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    source: PropensitySource,
    pub floor: f64,
}

impl PropensityModel {
    /// Prediction for one unit, clipped to `[floor, 1 - floor]`.
    pub fn predict_unit(&self, schema: &Schema, unit: &Unit) -> Result<f64> {
        let labels = cell_labels(schema, unit);
        let raw = match &self.source {
            PropensitySource::Logit { design, coefficients } => {
                let row = design.design_row(&labels)?;
                sigmoid(row.iter().zip(coefficients).map(|(a, b)| a * b).sum())
            }
            PropensitySource::Population { stratum_names, table } => {
                // Population probabilities are returned verbatim.
                let key = cell_name(stratum_names, &labels);
                return table
                    .get(&key)
                    .copied()
                    .ok_or_else(|| Error::validation(format!("population propensity table has no entry for {key}")));
            }
        };
        Ok(raw.clamp(self.floor, 1.0 - self.floor))
    }

    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        dataset.units().iter().map(|u| self.predict_unit(dataset.schema(), u)).collect()
    }

    pub fn is_population(&self) -> bool {
        matches!(self.source, PropensitySource::Population { .. })
    }
}

/// Rejects designs in which some level (or cell) holds only one arm.
fn check_separation(dataset: &Dataset, design: &DesignDescription) -> Result<()> {
    let schema = dataset.schema();
    let mut arms: BTreeMap<Vec<String>, (usize, usize)> = BTreeMap::new();
    for u in dataset.units() {
        let labels = cell_labels(schema, u);
        let keys: Vec<Vec<String>> = match design.kind {
            StratumDesign::Saturated => vec![labels],
            StratumDesign::MainEffects => labels
                .iter()
                .enumerate()
                .map(|(v, l)| {
                    let mut k = vec![String::new(); labels.len()];
                    k[v] = l.clone();
                    k
                })
                .collect(),
        };
        for k in keys {
            let e = arms.entry(k).or_default();
            if u.treated() {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
    }
    for (key, (t, c)) in arms {
        if t == 0 || c == 0 {
            let name = match design.kind {
                StratumDesign::Saturated => cell_name(&design.stratum_names, &key),
                StratumDesign::MainEffects => {
                    let v = key.iter().position(|l| !l.is_empty()).unwrap_or(0);
                    format!("{}={}", design.stratum_names[v], key[v])
                }
            };
            let arm = if t == 0 { "no treated" } else { "no control" };
            return Err(Error::numerical(format!("logit separation: stratum cell {name} has {arm} units")));
        }
    }
    Ok(())
}

/// Maximum-likelihood logit of the treatment indicator on the stratum design.
pub fn fit_propensity_logit(dataset: &Dataset, design: StratumDesign, floor: f64) -> Result<PropensityModel> {
    if !(0.0..0.5).contains(&floor) {
        return Err(Error::validation(format!("propensity floor must lie in [0, 0.5), got {floor}")));
    }
    let desc = DesignDescription::build(dataset, design);
    check_separation(dataset, &desc)?;
    let x = desc.matrix(dataset, 0..dataset.len())?;
    let y: Vec<f64> = dataset.units().iter().map(|u| f64::from(u8::from(u.treated()))).collect();
    let fit = logit_irls(&x, &y, &vec![1.0; y.len()], IrlsOptions::default())?;
    Ok(PropensityModel { source: PropensitySource::Logit { design: desc, coefficients: fit.coef }, floor })
}

/// Wraps a known per-cell assignment probability table.
///
/// Keys are cell names as produced by [`cell_name`]; with a single stratum
/// variable `z_s` that is `z_s=<label>`, and with no strata `(single cell)`.
pub fn fit_propensity_population(dataset: &Dataset, table: &BTreeMap<String, f64>) -> Result<PropensityModel> {
    let names: Vec<String> = dataset.schema().strata.iter().map(|v| v.name.clone()).collect();
    for (k, &p) in table {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::validation(format!("population propensity for {k} must lie in (0, 1), got {p}")));
        }
    }
    let mut missing = BTreeSet::new();
    for u in dataset.units() {
        let key = cell_name(&names, &cell_labels(dataset.schema(), u));
        if !table.contains_key(&key) {
            missing.insert(key);
        }
    }
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "population propensity table is missing cells: {}",
            missing.into_iter().collect::<Vec<_>>().join("; ")
        )));
    }
    Ok(PropensityModel {
        source: PropensitySource::Population { stratum_names: names, table: table.clone() },
        floor: 0.0,
    })
}

/// Arm-specific least-squares models for `E[Y | D = d, Z = z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub outcome: String,
    design: DesignDescription,
    pub treated_coef: Vec<f64>,
    pub control_coef: Vec<f64>,
    pub treated_residual_variance: f64,
    pub control_residual_variance: f64,
}

impl OutcomeModel {
    /// `(μ₁(z), μ₋₁(z))` for one unit.
    pub fn predict_unit(&self, schema: &Schema, unit: &Unit) -> Result<(f64, f64)> {
        let row = self.design.design_row(&cell_labels(schema, unit))?;
        let dot = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        Ok((dot(&self.treated_coef), dot(&self.control_coef)))
    }

    pub fn predict(&self, dataset: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut mu1 = Vec::with_capacity(dataset.len());
        let mut mu0 = Vec::with_capacity(dataset.len());
        for u in dataset.units() {
            let (a, b) = self.predict_unit(dataset.schema(), u)?;
            mu1.push(a);
            mu0.push(b);
        }
        Ok((mu1, mu0))
    }

    pub fn design(&self) -> &DesignDescription {
        &self.design
    }
}

pub fn fit_outcome_means(dataset: &Dataset, design: StratumDesign, outcome: &str) -> Result<OutcomeModel> {
    let desc = DesignDescription::build(dataset, design);
    let y = dataset.outcome(outcome)?;
    let fit_arm = |arm: i8| -> Result<(Vec<f64>, f64)> {
        let idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.units()[i].d == arm).collect();
        let x = desc.matrix(dataset, idx.iter().copied())?;
        let ya: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let label = if arm == 1 { "treated" } else { "control" };
        let fit = ols(&x, &ya).map_err(|e| match e {
            Error::Numerical(m) => Error::numerical(format!("{label} outcome model: {m}")),
            other => other,
        })?;
        let v = fit.residual_variance();
        Ok((fit.coef, v))
    };
    let (treated_coef, tv) = fit_arm(1)?;
    let (control_coef, cv) = fit_arm(-1)?;
    Ok(OutcomeModel {
        outcome: outcome.to_string(),
        design: desc,
        treated_coef,
        control_coef,
        treated_residual_variance: tv,
        control_residual_variance: cv,
    })
}

/// How the propensity enters the scores.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PropensitySpec {
    #[default]
    Logit,
    /// Known assignment probabilities per stratum cell.
    Population { table: BTreeMap<String, f64> },
}

/// Everything needed to fit both nuisance models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceSpec {
    pub design: StratumDesign,
    pub propensity: PropensitySpec,
    pub floor: f64,
    /// Fold count for cross-fitting; `None` fits once on all data (plug-in).
    pub cross_fit_folds: Option<usize>,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        NuisanceSpec {
            design: StratumDesign::MainEffects,
            propensity: PropensitySpec::Logit,
            floor: DEFAULT_FLOOR,
            cross_fit_folds: None,
        }
    }
}

/// Per-unit nuisance predictions aligned with the dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisancePredictions {
    pub propensity: Vec<f64>,
    pub mu_treated: Vec<f64>,
    pub mu_control: Vec<f64>,
    pub cross_fitted: bool,
}

/// Both nuisance models fitted on one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedNuisance {
    pub propensity: PropensityModel,
    pub outcome: OutcomeModel,
}

impl FittedNuisance {
    pub fn fit(dataset: &Dataset, spec: &NuisanceSpec, outcome: &str) -> Result<Self> {
        let propensity = match &spec.propensity {
            PropensitySpec::Logit => fit_propensity_logit(dataset, spec.design, spec.floor)?,
            PropensitySpec::Population { table } => fit_propensity_population(dataset, table)?,
        };
        let outcome = fit_outcome_means(dataset, spec.design, outcome)?;
        Ok(FittedNuisance { propensity, outcome })
    }

    pub fn predict(&self, dataset: &Dataset) -> Result<NuisancePredictions> {
        let propensity = self.propensity.predict(dataset)?;
        let (mu_treated, mu_control) = self.outcome.predict(dataset)?;
        Ok(NuisancePredictions { propensity, mu_treated, mu_control, cross_fitted: false })
    }
}

/// Out-of-fold nuisance predictions: unit `i` is predicted by models fitted on
/// every fold except its own. Folds are fitted in parallel.
pub fn cross_fit(dataset: &Dataset, k: usize, seed: u64, spec: &NuisanceSpec, outcome: &str) -> Result<NuisancePredictions> {
    let folds = split_folds(dataset.len(), k, seed)?;
    let per_fold: Vec<Result<(Vec<usize>, NuisancePredictions)>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = folds.split(f);
            let fit = dataset
                .subset(&train)
                .and_then(|t| FittedNuisance::fit(&t, spec, outcome))
                .map_err(|e| e.in_fold(f))?;
            let mut preds = NuisancePredictions {
                propensity: Vec::with_capacity(test.len()),
                mu_treated: Vec::with_capacity(test.len()),
                mu_control: Vec::with_capacity(test.len()),
                cross_fitted: true,
            };
            for &i in &test {
                let u = &dataset.units()[i];
                let p = fit.propensity.predict_unit(dataset.schema(), u).map_err(|e| e.in_fold(f))?;
                let (m1, m0) = fit.outcome.predict_unit(dataset.schema(), u).map_err(|e| e.in_fold(f))?;
                preds.propensity.push(p);
                preds.mu_treated.push(m1);
                preds.mu_control.push(m0);
            }
            Ok((test, preds))
        })
        .collect();
    let n = dataset.len();
    let mut out = NuisancePredictions {
        propensity: vec![0.0; n],
        mu_treated: vec![0.0; n],
        mu_control: vec![0.0; n],
        cross_fitted: true,
    };
    for r in per_fold {
        let (test, preds) = r?;
        for (j, &i) in test.iter().enumerate() {
            out.propensity[i] = preds.propensity[j];
            out.mu_treated[i] = preds.mu_treated[j];
            out.mu_control[i] = preds.mu_control[j];
        }
    }
    Ok(out)
}

/// Plug-in or cross-fitted predictions according to `spec.cross_fit_folds`.
pub fn nuisance_predictions(dataset: &Dataset, spec: &NuisanceSpec, outcome: &str, seed: u64) -> Result<NuisancePredictions> {
    match spec.cross_fit_folds {
        Some(k) => cross_fit(dataset, k, seed, spec, outcome),
        None => FittedNuisance::fit(dataset, spec, outcome)?.predict(dataset),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{StratumVar, Unit};

    fn unit(id: usize, y: f64, d: i8, z: u32) -> Unit {
        Unit { id: id.to_string(), y, d, z: vec![z], x: vec![], extra: vec![] }
    }

    fn dataset(units: Vec<Unit>, cells: usize) -> Dataset {
        let schema = Schema {
            features: vec![],
            strata: vec![StratumVar { name: "z_s".into(), labels: (0..cells).map(|c| c.to_string()).collect() }],
            outcomes: vec![],
        };
        Dataset::new(schema, units, 1.16).unwrap()
    }

    /// Two cells: cell 0 has 3 of 10 treated, cell 1 has 6 of 10 treated.
    fn two_cells() -> Dataset {
        let mut units = Vec::new();
        for i in 0..10 {
            units.push(unit(i, i as f64, if i < 3 { 1 } else { -1 }, 0));
        }
        for i in 0..10 {
            units.push(unit(10 + i, 2.0 * i as f64, if i < 6 { 1 } else { -1 }, 1));
        }
        dataset(units, 2)
    }

    #[test]
    fn intercept_only_logit_is_sample_share() {
        let units = (0..6).map(|i| unit(i, 1.0, if i < 3 { 1 } else { -1 }, 0)).collect();
        let ds = dataset(units, 1);
        let m = fit_propensity_logit(&ds, StratumDesign::MainEffects, DEFAULT_FLOOR).unwrap();
        for p in m.predict(&ds).unwrap() {
            assert!((p - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_logit_reproduces_cell_shares() {
        let ds = two_cells();
        let m = fit_propensity_logit(&ds, StratumDesign::Saturated, DEFAULT_FLOOR).unwrap();
        let p = m.predict(&ds).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-8);
        assert!((p[10] - 0.6).abs() < 1e-8);
    }

    #[test]
    fn all_treated_cell_is_separation() {
        let mut units: Vec<Unit> = (0..4).map(|i| unit(i, 1.0, if i < 2 { 1 } else { -1 }, 0)).collect();
        units.push(unit(4, 1.0, 1, 1));
        units.push(unit(5, 1.0, 1, 1));
        let ds = dataset(units, 2);
        let err = fit_propensity_logit(&ds, StratumDesign::MainEffects, DEFAULT_FLOOR).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert!(err.to_string().contains("z_s=1"), "{err}");
    }

    #[test]
    fn population_table_lookup() {
        let ds = two_cells();
        let table: BTreeMap<String, f64> = [("z_s=0".to_string(), 0.5), ("z_s=1".to_string(), 0.116)].into();
        let m = fit_propensity_population(&ds, &table).unwrap();
        let p = m.predict(&ds).unwrap();
        assert_eq!(p[0], 0.5);
        assert_eq!(p[19], 0.116);
        let partial: BTreeMap<String, f64> = [("z_s=0".to_string(), 0.5)].into();
        assert!(matches!(fit_propensity_population(&ds, &partial), Err(Error::Validation(_))));
    }

    #[test]
    fn intercept_only_outcome_means_are_arm_means() {
        let units = (0..6).map(|i| if i < 3 { unit(i, 8.0, 1, 0) } else { unit(i, 5.0, -1, 0) }).collect();
        let ds = dataset(units, 1);
        let m = fit_outcome_means(&ds, StratumDesign::MainEffects, "y").unwrap();
        let (m1, m0) = m.predict(&ds).unwrap();
        assert!((m1[0] - 8.0).abs() < 1e-12 && (m0[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_outcome_means_are_cell_arm_means() {
        let ds = two_cells();
        let m = fit_outcome_means(&ds, StratumDesign::Saturated, "y").unwrap();
        let (m1, m0) = m.predict(&ds).unwrap();
        // cell 0: treated y = 0,1,2 ; control y = 3..9
        assert!((m1[0] - 1.0).abs() < 1e-8);
        assert!((m0[0] - 6.0).abs() < 1e-8);
        // cell 1: treated y = 0,2,..,10 ; control y = 12,14,16,18
        assert!((m1[10] - 5.0).abs() < 1e-8);
        assert!((m0[10] - 15.0).abs() < 1e-8);
    }

    #[test]
    fn level_missing_from_one_arm_is_rank_error() {
        let mut units: Vec<Unit> = (0..6).map(|i| unit(i, 1.0, if i % 2 == 0 { 1 } else { -1 }, 0)).collect();
        units.push(unit(6, 1.0, 1, 1));
        let ds = dataset(units, 2);
        let err = fit_outcome_means(&ds, StratumDesign::MainEffects, "y").unwrap_err();
        assert!(err.to_string().contains("z_s=1"), "{err}");
    }

    #[test]
    fn cross_fit_on_homogeneous_data_equals_plug_in() {
        let units = (0..40).map(|i| if i % 2 == 0 { unit(i, 8.0, 1, 0) } else { unit(i, 5.0, -1, 0) }).collect();
        let ds = dataset(units, 1);
        let spec = NuisanceSpec::default();
        let plug = FittedNuisance::fit(&ds, &spec, "y").unwrap().predict(&ds).unwrap();
        let cf = cross_fit(&ds, 4, 11, &spec, "y").unwrap();
        for i in 0..ds.len() {
            assert!((plug.mu_treated[i] - cf.mu_treated[i]).abs() < 1e-12);
            assert!((plug.mu_control[i] - cf.mu_control[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_fit_leave_one_out_means() {
        // Leave-one-out closed form: mean of the arm with unit i removed.
        let ys = [1.0, 4.0, 2.0, 8.0, 3.0, 5.0, 7.0, 6.0];
        let units: Vec<Unit> = ys.iter().enumerate().map(|(i, &y)| unit(i, y, if i % 2 == 0 { 1 } else { -1 }, 0)).collect();
        let ds = dataset(units, 1);
        let cf = cross_fit(&ds, ys.len(), 5, &NuisanceSpec::default(), "y").unwrap();
        for i in 0..ys.len() {
            let treated = i % 2 == 0;
            let arm: Vec<f64> = (0..ys.len()).filter(|&j| j != i && (j % 2 == 0) == treated).map(|j| ys[j]).collect();
            let loo = arm.iter().sum::<f64>() / arm.len() as f64;
            let got = if treated { cf.mu_treated[i] } else { cf.mu_control[i] };
            assert!((got - loo).abs() < 1e-12, "unit {i}: {got} vs {loo}");
        }
    }

    #[test]
    fn cross_fit_reports_failing_fold() {
        // Only two treated units: some fold complement will hold just one arm in... make it none.
        let mut units: Vec<Unit> = (0..10).map(|i| unit(i, 1.0, -1, 0)).collect();
        units[0].d = 1;
        let ds = dataset(units, 1);
        let err = cross_fit(&ds, 10, 1, &NuisanceSpec::default(), "y").unwrap_err();
        assert!(err.to_string().contains("fold"), "{err}");
    }

    #[test]
    fn predictions_respect_floor() {
        let mut units: Vec<Unit> = (0..200).map(|i| unit(i, 1.0, -1, 0)).collect();
        units[0].d = 1;
        let ds = dataset(units, 1);
        let m = fit_propensity_logit(&ds, StratumDesign::MainEffects, 0.01).unwrap();
        assert!(m.predict(&ds).unwrap().iter().all(|&p| (0.01..=0.99).contains(&p)));
    }
}
