//! Heterogeneity diagnostics: sorted-effects curves with uniform bootstrap
//! bands, the best-linear-predictor test, and extreme-group comparisons.
//!
//! All three use the interacted linear model `y ~ 1 + x + T + T·x` with
//! `T = 1{d = 1}`, whose implied CATE is `θ_T + θ_{T·x}·x`.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{split_folds, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{mean_sd, ols, Design, OlsFit};
use crate::scores::{Estimate, ScoreSet};

/// Bootstrap replications used by default for the uniform band.
pub const DEFAULT_REPS: usize = 500;
/// Smallest replication count accepted.
pub const MIN_REPS: usize = 100;
/// Uniform band coverage.
pub const BAND_LEVEL: f64 = 0.95;

/// Percentiles 5, 6, …, 95.
pub fn default_grid() -> Vec<f64> {
    (5..=95).map(f64::from).collect()
}

fn interacted_design(dataset: &Dataset) -> Design {
    let feats = &dataset.schema().features;
    let mut names = vec!["(intercept)".to_string()];
    names.extend(feats.iter().cloned());
    names.push("treated".into());
    names.extend(feats.iter().map(|f| format!("treated*{f}")));
    let mut x = Design::with_capacity(names, dataset.len());
    for u in dataset.units() {
        x.push_row(&interacted_row(&u.x, u.treated()));
    }
    x
}

fn interacted_row(x: &[f64], treated: bool) -> Vec<f64> {
    let t = f64::from(u8::from(treated));
    let mut row = Vec::with_capacity(2 * x.len() + 2);
    row.push(1.0);
    row.extend_from_slice(x);
    row.push(t);
    row.extend(x.iter().map(|v| t * v));
    row
}

/// CATE implied by interacted-model coefficients.
fn cate(coef: &[f64], x: &[f64]) -> f64 {
    let p = x.len();
    coef[p + 1] + x.iter().zip(&coef[p + 2..]).map(|(a, b)| a * b).sum::<f64>()
}

fn fit_interacted(dataset: &Dataset, outcome: &str) -> Result<(Design, OlsFit)> {
    let y = dataset.outcome(outcome)?;
    let x = interacted_design(dataset);
    let fit = ols(&x, &y)?;
    Ok((x, fit))
}

/// Per-unit CATE from the interacted model fitted on the whole sample.
pub fn interacted_cate(dataset: &Dataset, outcome: &str) -> Result<Vec<f64>> {
    let (_, fit) = fit_interacted(dataset, outcome)?;
    Ok(dataset.units().iter().map(|u| cate(&fit.coef, &u.x)).collect())
}

/// Type-7 (linear interpolation) quantile of sorted data, `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn percentile_curve(mut values: Vec<f64>, grid: &[f64]) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    grid.iter().map(|g| quantile_sorted(&values, g / 100.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SortedEffectsCurve {
    pub outcome: String,
    pub percentiles: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub reps: usize,
    /// Sup-t critical value used for the band.
    pub critical_value: f64,
}

impl SortedEffectsCurve {
    /// CSV `percentile, estimate, lo, hi`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["percentile", "estimate", "lo", "hi"])?;
        for i in 0..self.percentiles.len() {
            w.write_record([
                self.percentiles[i].to_string(),
                self.estimate[i].to_string(),
                self.lower[i].to_string(),
                self.upper[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Vector-graphics plot: curve, shaded band, and a horizontal line at the cost.
    pub fn write_svg<W: Write>(&self, cost: f64, mut writer: W) -> Result<()> {
        let (w, h, m) = (640.0, 400.0, 50.0);
        let xs = (self.percentiles[0], *self.percentiles.last().expect("non-empty grid"));
        let lo = self.lower.iter().copied().chain([cost]).fold(f64::INFINITY, f64::min);
        let hi = self.upper.iter().copied().chain([cost]).fold(f64::NEG_INFINITY, f64::max);
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
        let (lo, hi) = (lo - pad, hi + pad);
        let px = |p: f64| m + (p - xs.0) / (xs.1 - xs.0).max(1e-12) * (w - 2.0 * m);
        let py = |v: f64| h - m - (v - lo) / (hi - lo) * (h - 2.0 * m);
        let path = |vals: &[f64]| {
            self.percentiles
                .iter()
                .zip(vals)
                .map(|(p, v)| format!("{:.2},{:.2}", px(*p), py(*v)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut band: Vec<String> =
            self.percentiles.iter().zip(&self.upper).map(|(p, v)| format!("{:.2},{:.2}", px(*p), py(*v))).collect();
        band.extend(self.percentiles.iter().zip(&self.lower).rev().map(|(p, v)| format!("{:.2},{:.2}", px(*p), py(*v))));
        writeln!(writer, r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"##)?;
        writeln!(writer, r##"<rect width="100%" height="100%" fill="white"/>"##)?;
        writeln!(writer, r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.6"/>"##, band.join(" "))?;
        writeln!(writer, r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##, path(&self.estimate))?;
        let yc = py(cost);
        writeln!(writer, r##"<line x1="{m}" y1="{yc:.2}" x2="{:.2}" y2="{yc:.2}" stroke="#cb181d" stroke-dasharray="6,4"/>"##, w - m)?;
        writeln!(writer, r##"<line x1="{m}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"##, h - m, w - m, h - m)?;
        writeln!(writer, r##"<line x1="{m}" y1="{m}" x2="{m}" y2="{:.2}" stroke="black"/>"##, h - m)?;
        for p in [xs.0, (xs.0 + xs.1) / 2.0, xs.1] {
            writeln!(writer, r##"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{p}</text>"##, px(p), h - m + 18.0)?;
        }
        for v in [lo + pad, cost, hi - pad] {
            writeln!(writer, r##"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{v:.2}</text>"##, m - 6.0, py(v) + 4.0)?;
        }
        writeln!(writer, r##"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">percentile of CATE</text>"##, w / 2.0, h - 12.0)?;
        writeln!(writer, "</svg>")?;
        Ok(())
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|g| !(0.0..=100.0).contains(g)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation("percentile grid must be non-empty, increasing, within [0, 100]"));
    }
    Ok(())
}

/// Sorted CATE percentiles with a uniform band from a Gaussian multiplier
/// bootstrap of the OLS influence representation
/// `θ* = θ̂ + (XᵀX)⁻¹ Σ ξᵢ Xᵢ eᵢ`, studentized per grid point (sup-t).
pub fn sorted_effects(dataset: &Dataset, outcome: &str, grid: &[f64], reps: usize, seed: u64) -> Result<SortedEffectsCurve> {
    validate_grid(grid)?;
    if reps < MIN_REPS {
        return Err(Error::validation(format!("sorted effects needs at least {MIN_REPS} bootstrap replications, got {reps}")));
    }
    let (x, fit) = fit_interacted(dataset, outcome)?;
    let features = dataset.features();
    let estimate = percentile_curve(features.iter().map(|xi| cate(&fit.coef, xi)).collect(), grid);
    let k = x.cols();
    let draws: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut score = DVector::<f64>::zeros(k);
            for i in 0..x.rows {
                let xi: f64 = StandardNormal.sample(&mut rng);
                let w = xi * fit.residuals[i];
                for (a, v) in x.row(i).iter().enumerate() {
                    score[a] += w * v;
                }
            }
            let delta = &fit.bread * score;
            let coef: Vec<f64> = fit.coef.iter().zip(delta.iter()).map(|(c, d)| c + d).collect();
            let curve = percentile_curve(features.iter().map(|xi| cate(&coef, xi)).collect(), grid);
            curve.iter().zip(&estimate).map(|(b, e)| b - e).collect()
        })
        .collect();
    let sd: Vec<f64> = (0..grid.len())
        .map(|g| {
            let dev: Vec<f64> = draws.iter().map(|d| d[g]).collect();
            (dev.iter().map(|v| v * v).sum::<f64>() / reps as f64).sqrt()
        })
        .collect();
    let mut tmax: Vec<f64> = draws
        .iter()
        .map(|d| d.iter().zip(&sd).map(|(v, s)| if *s > 0.0 { v.abs() / s } else { 0.0 }).fold(0.0, f64::max))
        .collect();
    tmax.sort_by(f64::total_cmp);
    let critical_value = quantile_sorted(&tmax, BAND_LEVEL);
    Ok(SortedEffectsCurve {
        outcome: outcome.to_string(),
        percentiles: grid.to_vec(),
        lower: estimate.iter().zip(&sd).map(|(e, s)| e - critical_value * s).collect(),
        upper: estimate.iter().zip(&sd).map(|(e, s)| e + critical_value * s).collect(),
        estimate,
        reps,
        critical_value,
    })
}

/// Coefficient with HC1 SE and one-sided p-value for positivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneSided {
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
}

impl OneSided {
    fn new(estimate: f64, se: f64) -> Self {
        let z = Estimate { estimate, se }.z();
        let p_value = Normal::standard().sf(z).clamp(0.0, 1.0);
        OneSided { estimate, se, p_value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlpTestReport {
    pub outcome: String,
    pub n: usize,
    pub folds: usize,
    pub average_effect: OneSided,
    /// Undefined when the cross-fitted proxy has no variance.
    pub heterogeneity_loading: Option<OneSided>,
    pub degenerate_proxy: bool,
}

/// Cross-fitted interacted-OLS CATE predictions: fold `f` is predicted by the model fitted on the other folds.
pub fn cross_fitted_cate(dataset: &Dataset, outcome: &str, k: usize, seed: u64) -> Result<Vec<f64>> {
    let folds = split_folds(dataset.len(), k, seed)?;
    let parts: Vec<(Vec<usize>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = folds.split(f);
            let (_, fit) = fit_interacted(&dataset.subset(&train)?, outcome).map_err(|e| e.in_fold(f))?;
            let pred = test.iter().map(|&i| cate(&fit.coef, &dataset.units()[i].x)).collect();
            Ok((test, pred))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; dataset.len()];
    for (idx, pred) in parts {
        for (i, v) in idx.into_iter().zip(pred) {
            out[i] = v;
        }
    }
    Ok(out)
}

/// Regression of Γ on `{1, ĉ − mean(ĉ)}` with HC1 SEs.
pub fn blp_regression(scores: &ScoreSet, proxy: &[f64], folds: usize) -> Result<BlpTestReport> {
    if proxy.len() != scores.len() {
        return Err(Error::validation("proxy and score lengths differ"));
    }
    if scores.len() < 3 {
        return Err(Error::validation("BLP test needs at least three units"));
    }
    let (m, sd) = mean_sd(proxy);
    let degenerate = !(sd > 1e-12 * m.abs().max(1.0));
    let names: Vec<String> =
        if degenerate { vec!["(intercept)".into()] } else { vec!["(intercept)".into(), "proxy".into()] };
    let mut x = Design::with_capacity(names, proxy.len());
    for c in proxy {
        if degenerate {
            x.push_row(&[1.0]);
        } else {
            x.push_row(&[1.0, c - m]);
        }
    }
    let fit = ols(&x, &scores.gamma)?;
    let cov = fit.hc1_covariance(&x);
    let se = |j: usize| cov[(j, j)].max(0.0).sqrt();
    Ok(BlpTestReport {
        outcome: scores.outcome.clone(),
        n: scores.len(),
        folds,
        average_effect: OneSided::new(fit.coef[0], se(0)),
        heterogeneity_loading: (!degenerate).then(|| OneSided::new(fit.coef[1], se(1))),
        degenerate_proxy: degenerate,
    })
}

/// Best-linear-predictor heterogeneity test with a cross-fitted interacted-OLS proxy.
pub fn blp_test(dataset: &Dataset, scores: &ScoreSet, k: usize, seed: u64) -> Result<BlpTestReport> {
    if scores.len() != dataset.len() {
        return Err(Error::validation("scores do not match the dataset"));
    }
    let proxy = cross_fitted_cate(dataset, &scores.outcome, k, seed)?;
    blp_regression(scores, &proxy, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub feature: String,
    pub top_mean: f64,
    pub bottom_mean: f64,
    pub difference: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeGroups {
    pub q: f64,
    pub group_size: usize,
    pub rows: Vec<GroupComparison>,
    /// Per-feature SEs only: no family-wise correction is applied.
    pub multiple_testing_corrected: bool,
}

/// Feature means of the units with the `q` largest and `q` smallest interacted-OLS CATEs.
pub fn extreme_group_summary(dataset: &Dataset, outcome: &str, q: f64) -> Result<ExtremeGroups> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::validation(format!("tail fraction must lie in (0, 0.5), got {q}")));
    }
    let tau = interacted_cate(dataset, outcome)?;
    let mut order: Vec<usize> = (0..tau.len()).collect();
    order.sort_by(|&a, &b| tau[a].total_cmp(&tau[b]).then(a.cmp(&b)));
    let size = (q * tau.len() as f64 + 1e-9).floor() as usize;
    if size < 2 {
        return Err(Error::validation("tail groups need at least two units each"));
    }
    let bottom = &order[..size];
    let top = &order[order.len() - size..];
    let rows = dataset
        .schema()
        .features
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = |idx: &[usize]| idx.iter().map(|&i| dataset.units()[i].x[j]).collect::<Vec<_>>();
            let (mt, st) = mean_sd(&col(top));
            let (mb, sb) = mean_sd(&col(bottom));
            GroupComparison {
                feature: name.clone(),
                top_mean: mt,
                bottom_mean: mb,
                difference: Estimate { estimate: mt - mb, se: ((st * st + sb * sb) / size as f64).sqrt() },
            }
        })
        .collect();
    Ok(ExtremeGroups { q, group_size: size, rows, multiple_testing_corrected: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Schema, Unit};
    use crate::eval::score_dataset;
    use crate::nuisance::NuisanceSpec;
    use crate::scores::estimate_ate_aipw;
    use crate::synthetic::{constant_effect_spec, generate, linear_cate_spec, Surface};

    #[test]
    fn type7_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.25) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn noiseless_constant_effect_curve_is_flat() {
        let (ds, _) = generate(&constant_effect_spec(2.0, 0.0), 2000, 1).unwrap();
        let c = sorted_effects(&ds, "y", &default_grid(), 100, 1).unwrap();
        for i in 0..c.estimate.len() {
            assert!((c.estimate[i] - 2.0).abs() < 1e-8);
            assert!(c.lower[i] <= c.estimate[i] && c.estimate[i] <= c.upper[i]);
        }
    }

    #[test]
    fn two_group_curve_steps_at_median() {
        let mut spec = constant_effect_spec(0.0, 1.0);
        spec.effect = Surface::step("x_2", 0.5, Surface::constant(0.0), Surface::constant(2.0));
        spec.features[1].dist = crate::synthetic::FeatureDist::Bernoulli { p: 0.5 };
        let (ds, _) = generate(&spec, 20_000, 4).unwrap();
        let c = sorted_effects(&ds, "y", &default_grid(), 100, 4).unwrap();
        let at = |p: f64| c.estimate[c.percentiles.iter().position(|&g| g == p).unwrap()];
        assert!(at(20.0).abs() < 0.2, "{}", at(20.0));
        assert!((at(80.0) - 2.0).abs() < 0.2, "{}", at(80.0));
        assert!(c.estimate.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn too_few_reps_rejected() {
        let (ds, _) = generate(&constant_effect_spec(2.0, 1.0), 200, 1).unwrap();
        assert!(matches!(sorted_effects(&ds, "y", &default_grid(), 50, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn rank_deficient_design_is_numerical_error() {
        let units = (0..40)
            .map(|i| Unit { id: i.to_string(), y: i as f64, d: if i % 2 == 0 { 1 } else { -1 }, z: vec![], x: vec![1.0], extra: vec![] })
            .collect();
        let schema = Schema { features: vec!["x_c".into()], strata: vec![], outcomes: vec![] };
        let ds = Dataset::new(schema, units, 1.0).unwrap();
        assert!(matches!(sorted_effects(&ds, "y", &default_grid(), 100, 0), Err(Error::Numerical(_))));
    }

    #[test]
    fn blp_intercept_is_aipw_ate() {
        let (ds, _) = generate(&linear_cate_spec(), 4000, 3).unwrap();
        let scores = score_dataset(&ds, &NuisanceSpec::default(), "y", 3).unwrap();
        let r = blp_test(&ds, &scores, 5, 3).unwrap();
        let ate = estimate_ate_aipw(&scores).unwrap();
        assert!((r.average_effect.estimate - ate.estimate).abs() < 1e-8);
        let load = r.heterogeneity_loading.unwrap();
        assert!((0.0..=1.0).contains(&load.p_value));
        assert!((load.estimate - 1.0).abs() < 0.5, "{}", load.estimate);
    }

    #[test]
    fn constant_proxy_flags_loading() {
        let (ds, _) = generate(&constant_effect_spec(2.0, 1.0), 100, 3).unwrap();
        let mut scores = score_dataset(&ds, &NuisanceSpec::default(), "y", 3).unwrap();
        scores.gamma = vec![1.5; scores.len()];
        let r = blp_regression(&scores, &vec![0.3; scores.len()], 1).unwrap();
        assert!(r.degenerate_proxy && r.heterogeneity_loading.is_none());
        assert!((r.average_effect.estimate - 1.5).abs() < 1e-12);
    }

    #[test]
    fn extreme_groups() {
        let (ds, _) = generate(&linear_cate_spec(), 100, 8).unwrap();
        let g = extreme_group_summary(&ds, "y", 0.1).unwrap();
        assert_eq!(g.group_size, 10);
        assert!(!g.multiple_testing_corrected);
        let (ds, _) = generate(&linear_cate_spec(), 20_000, 8).unwrap();
        let g = extreme_group_summary(&ds, "y", 0.1).unwrap();
        // τ increases in x_1; x_2 is unrelated to τ but enters the fitted CATE only through noise.
        assert!(g.rows[0].top_mean > g.rows[0].bottom_mean);
        assert!(extreme_group_summary(&ds, "y", 0.5).is_err());
    }

    #[test]
    fn svg_and_csv_exports() {
        let (ds, _) = generate(&constant_effect_spec(2.0, 1.0), 500, 1).unwrap();
        let c = sorted_effects(&ds, "y", &default_grid(), 100, 1).unwrap();
        let mut csv = Vec::new();
        c.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("percentile,estimate,lo,hi\n"));
        assert_eq!(text.lines().count(), 92);
        let mut svg = Vec::new();
        c.write_svg(1.16, &mut svg).unwrap();
        let svg = String::from_utf8(svg).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let (ds, _) = generate(&linear_cate_spec(), 1000, 2).unwrap();
        let a = sorted_effects(&ds, "y", &default_grid(), 100, 9).unwrap();
        let b = sorted_effects(&ds, "y", &default_grid(), 100, 9).unwrap();
        assert_eq!(a, b);
    }
}
