//! Simulated campaigns with known potential-outcome surfaces.
//!
//! Potential outcomes share their noise draw: `y(−1) = Z·(μ₋₁(x)/(1−π₀) + ε)`
//! and `y(1) = y(−1) + τ(x)`, where `Z ~ Bernoulli(1 − π₀)` is the
//! zero-inflation mask and `ε` is centred noise. Hence `E[y(−1) | x] = μ₋₁(x)`
//! and the individual effect is exactly `τ(x)`.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Schema, StratumVar, Unit};
use crate::error::{Error, Result};
use crate::nuisance::cell_name;
use crate::policy::Rule;

/// Units per independently seeded generation chunk.
const CHUNK: usize = 4096;
/// Draws used by [`true_value`] when the feature distribution has no small finite support.
pub const MONTE_CARLO_DRAWS: usize = 1_000_000;
/// Largest feature grid enumerated exactly by [`true_value`].
const MAX_GRID: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureDist {
    /// Continuous on `[lo, hi)`, or `levels` equally spaced equiprobable points from `lo` to `hi`.
    Uniform { lo: f64, hi: f64, levels: Option<usize> },
    /// Normal, optionally rounded to a multiple of `round_to`.
    Normal { mean: f64, sd: f64, round_to: Option<f64> },
    Bernoulli { p: f64 },
}

impl FeatureDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            FeatureDist::Uniform { lo, hi, levels: None } => rng.random_range(lo..hi),
            FeatureDist::Uniform { lo, hi, levels: Some(l) } => {
                let k = rng.random_range(0..l);
                level_value(lo, hi, l, k)
            }
            FeatureDist::Normal { mean, sd, round_to } => {
                let v = mean + sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
                match round_to {
                    Some(step) => (v / step).round() * step,
                    None => v,
                }
            }
            FeatureDist::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < p)),
        }
    }

    /// Finite support with probabilities, when there is one.
    fn support(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            FeatureDist::Uniform { lo, hi, levels: Some(l) } => {
                Some((0..l).map(|k| (level_value(lo, hi, l, k), 1.0 / l as f64)).collect())
            }
            FeatureDist::Bernoulli { p } => Some(vec![(0.0, 1.0 - p), (1.0, p)]),
            _ => None,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            FeatureDist::Uniform { lo, hi, levels } => lo.is_finite() && hi.is_finite() && lo < hi && levels.is_none_or(|l| l >= 2),
            FeatureDist::Normal { mean, sd, round_to } => {
                mean.is_finite() && sd.is_finite() && sd >= 0.0 && round_to.is_none_or(|s| s > 0.0)
            }
            FeatureDist::Bernoulli { p } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!("invalid distribution for feature `{name}`")))
        }
    }
}

fn level_value(lo: f64, hi: f64, levels: usize, k: usize) -> f64 {
    lo + (hi - lo) * k as f64 / (levels - 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub dist: FeatureDist,
}

/// How a stratum variable is formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StratumSpec {
    /// Code = number of cutpoints strictly below the feature value.
    Bins { name: String, feature: String, cutpoints: Vec<f64> },
    /// Drawn independently with the given category weights.
    Fixed { name: String, weights: Vec<f64> },
}

impl StratumSpec {
    fn name(&self) -> &str {
        match self {
            StratumSpec::Bins { name, .. } | StratumSpec::Fixed { name, .. } => name,
        }
    }

    fn categories(&self) -> usize {
        match self {
            StratumSpec::Bins { cutpoints, .. } => cutpoints.len() + 1,
            StratumSpec::Fixed { weights, .. } => weights.len(),
        }
    }
}

/// Piecewise / linear surface over the features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Surface {
    Constant { value: f64 },
    Linear { intercept: f64, terms: BTreeMap<String, f64> },
    /// `below` where `x[feature] <= threshold`, else `above`.
    Step { feature: String, threshold: f64, below: Box<Surface>, above: Box<Surface> },
    Sum { parts: Vec<Surface> },
}

impl Surface {
    pub fn constant(value: f64) -> Self {
        Surface::Constant { value }
    }

    pub fn step(feature: &str, threshold: f64, below: Surface, above: Surface) -> Self {
        Surface::Step { feature: feature.into(), threshold, below: Box::new(below), above: Box::new(above) }
    }

    pub fn linear(intercept: f64, terms: &[(&str, f64)]) -> Self {
        Surface::Linear { intercept, terms: terms.iter().map(|(n, c)| (n.to_string(), *c)).collect() }
    }

    fn eval(&self, x: &[f64], index: &dyn Fn(&str) -> usize) -> f64 {
        match self {
            Surface::Constant { value } => *value,
            Surface::Linear { intercept, terms } => intercept + terms.iter().map(|(n, c)| c * x[index(n)]).sum::<f64>(),
            Surface::Step { feature, threshold, below, above } => {
                if x[index(feature)] <= *threshold {
                    below.eval(x, index)
                } else {
                    above.eval(x, index)
                }
            }
            Surface::Sum { parts } => parts.iter().map(|p| p.eval(x, index)).sum(),
        }
    }

    fn referenced(&self, out: &mut Vec<String>) {
        match self {
            Surface::Constant { .. } => {}
            Surface::Linear { terms, .. } => out.extend(terms.keys().cloned()),
            Surface::Step { feature, below, above, .. } => {
                out.push(feature.clone());
                below.referenced(out);
                above.referenced(out);
            }
            Surface::Sum { parts } => parts.iter().for_each(|p| p.referenced(out)),
        }
    }
}

/// Centred noise added to the baseline outcome.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    #[default]
    None,
    Normal { sd: f64 },
    /// Lognormal with the given mean and sd, shifted to mean zero (right-skewed).
    Lognormal { mean: f64, sd: f64 },
}

enum NoiseSampler {
    None,
    Normal(Normal<f64>),
    Lognormal(LogNormal<f64>, f64),
}

impl NoiseSpec {
    fn sampler(&self) -> Result<NoiseSampler> {
        Ok(match *self {
            NoiseSpec::None => NoiseSampler::None,
            NoiseSpec::Normal { sd } => {
                NoiseSampler::Normal(Normal::new(0.0, sd).map_err(|e| Error::validation(format!("noise: {e}")))?)
            }
            NoiseSpec::Lognormal { mean, sd } => {
                if !(mean > 0.0 && sd > 0.0) {
                    return Err(Error::validation("lognormal noise needs positive mean and sd"));
                }
                // Moment matching: σ² = ln(1 + sd²/mean²), μ = ln(mean) − σ²/2.
                let s2 = (1.0 + sd * sd / (mean * mean)).ln();
                let mu = mean.ln() - s2 / 2.0;
                NoiseSampler::Lognormal(
                    LogNormal::new(mu, s2.sqrt()).map_err(|e| Error::validation(format!("noise: {e}")))?,
                    mean,
                )
            }
        })
    }
}

impl NoiseSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            NoiseSampler::None => 0.0,
            NoiseSampler::Normal(n) => n.sample(rng),
            NoiseSampler::Lognormal(l, mean) => l.sample(rng) - mean,
        }
    }
}

/// Treatment probability per stratum cell (keys as produced by `cell_name`), with a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityTable {
    pub default: f64,
    #[serde(default)]
    pub cells: BTreeMap<String, f64>,
}

impl PropensityTable {
    pub fn uniform(p: f64) -> Self {
        PropensityTable { default: p, cells: BTreeMap::new() }
    }
}

/// Complete description of a simulated campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: String,
    pub version: u32,
    pub features: Vec<FeatureSpec>,
    #[serde(default)]
    pub strata: Vec<StratumSpec>,
    pub propensity: PropensityTable,
    /// `E[y(−1) | x]`.
    pub baseline: Surface,
    /// `τ(x) = y(1) − y(−1)`.
    pub effect: Surface,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Probability that both potential outcomes are zero-inflated (baseline masked to 0).
    #[serde(default)]
    pub zero_inflation: f64,
    pub cost: f64,
    /// Adds extra outcome `y2_donated = 1{y > 0}`.
    #[serde(default)]
    pub donation_indicator: bool,
}

impl DgpSpec {
    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::validation("spec needs at least one feature"));
        }
        for f in &self.features {
            f.dist.validate(&f.name)?;
        }
        let mut refs = Vec::new();
        self.baseline.referenced(&mut refs);
        self.effect.referenced(&mut refs);
        for s in &self.strata {
            match s {
                StratumSpec::Bins { feature, cutpoints, .. } => {
                    refs.push(feature.clone());
                    if cutpoints.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::validation(format!("stratum `{}` cutpoints must increase", s.name())));
                    }
                }
                StratumSpec::Fixed { weights, .. } => {
                    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                        return Err(Error::validation(format!("stratum `{}` weights invalid", s.name())));
                    }
                }
            }
        }
        for r in refs {
            if self.feature_index(&r).is_none() {
                return Err(Error::validation(format!("spec references unknown feature `{r}`")));
            }
        }
        let probs = std::iter::once(self.propensity.default).chain(self.propensity.cells.values().copied());
        for p in probs {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::validation(format!("propensity {p} outside (0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.zero_inflation) {
            return Err(Error::validation("zero_inflation must lie in [0, 1)"));
        }
        if !(self.cost.is_finite() && self.cost >= 0.0) {
            return Err(Error::validation("cost must be finite and non-negative"));
        }
        self.noise.sampler()?;
        Ok(())
    }

    fn eval_surface(&self, s: &Surface, x: &[f64]) -> f64 {
        s.eval(x, &|n| self.feature_index(n).expect("validated feature reference"))
    }

    pub fn baseline_at(&self, x: &[f64]) -> f64 {
        self.eval_surface(&self.baseline, x)
    }

    pub fn effect_at(&self, x: &[f64]) -> f64 {
        self.eval_surface(&self.effect, x)
    }

    /// Treat iff τ(x) > c.
    pub fn optimal_action(&self, x: &[f64]) -> i8 {
        if self.effect_at(x) - self.cost > 0.0 {
            1
        } else {
            -1
        }
    }

    fn stratum_names(&self) -> Vec<String> {
        self.strata.iter().map(|s| s.name().to_string()).collect()
    }

    /// Treatment probability for a cell given as dense codes.
    pub fn propensity_for(&self, z: &[u32]) -> f64 {
        let labels: Vec<String> = z.iter().map(u32::to_string).collect();
        let key = cell_name(&self.stratum_names(), &labels);
        self.propensity.cells.get(&key).copied().unwrap_or(self.propensity.default)
    }

    /// The full per-cell propensity table (every cell of the stratum grid).
    pub fn population_propensities(&self) -> BTreeMap<String, f64> {
        let names = self.stratum_names();
        let sizes: Vec<usize> = self.strata.iter().map(StratumSpec::categories).collect();
        let mut out = BTreeMap::new();
        let total: usize = sizes.iter().product();
        for mut idx in 0..total {
            let mut z = Vec::with_capacity(sizes.len());
            for &s in sizes.iter().rev() {
                z.push((idx % s) as u32);
                idx /= s;
            }
            z.reverse();
            let labels: Vec<String> = z.iter().map(u32::to_string).collect();
            out.insert(cell_name(&names, &labels), self.propensity_for(&z));
        }
        out
    }
}

/// Ground truth that real data never reveals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpTruth {
    pub true_cate: Vec<f64>,
    pub true_action: Vec<i8>,
    /// `E[y(−1) | x]` and `E[y(1) | x]` per unit.
    pub mu_control: Vec<f64>,
    pub mu_treated: Vec<f64>,
    /// Population treatment probability per unit.
    pub propensity: Vec<f64>,
    pub values: BenchmarkValues,
}

impl DgpTruth {
    /// Sidecar CSV `id, true_cate, true_action`.
    pub fn write_csv<W: Write>(&self, ids: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "true_cate", "true_action"])?;
        for (i, id) in ids.iter().enumerate() {
            w.write_record([id.clone(), self.true_cate[i].to_string(), self.true_action[i].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Population value of a rule with its simulation standard error (0 when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueValue {
    pub value: f64,
    pub se: f64,
}

/// True values of the benchmarks and of the optimal rule, plus the true gains of the optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkValues {
    pub all_treat: TrueValue,
    pub no_treat: TrueValue,
    pub random: TrueValue,
    pub optimal: TrueValue,
    pub optimal_share_treated: f64,
    pub optimal_vs_all: f64,
    pub optimal_vs_none: f64,
    pub optimal_vs_random: f64,
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

fn draw_features(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    spec.features.iter().map(|f| f.dist.sample(rng)).collect()
}

fn sample_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> u32 {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k as u32;
        }
        u -= w;
    }
    (weights.len() - 1) as u32
}

/// Draws `n` units. Deterministic in `(spec, n, seed)`; chunks use separate
/// ChaCha streams so the output does not depend on how chunks are scheduled.
pub fn generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<(Dataset, DgpTruth)> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::validation("n must be at least 1"));
    }
    let noise = spec.noise.sampler()?;
    let feature_idx: Vec<Option<usize>> = spec
        .strata
        .iter()
        .map(|s| match s {
            StratumSpec::Bins { feature, .. } => spec.feature_index(feature),
            StratumSpec::Fixed { .. } => None,
        })
        .collect();
    let keep = 1.0 - spec.zero_inflation;
    let chunks: Vec<(Vec<Unit>, Vec<[f64; 4]>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c as u64);
            let start = c * CHUNK;
            let end = (start + CHUNK).min(n);
            let mut units = Vec::with_capacity(end - start);
            let mut truth = Vec::with_capacity(end - start);
            for i in start..end {
                let x = draw_features(spec, &mut rng);
                let z: Vec<u32> = spec
                    .strata
                    .iter()
                    .zip(&feature_idx)
                    .map(|(s, fi)| match s {
                        StratumSpec::Bins { cutpoints, .. } => {
                            let v = x[fi.expect("validated")];
                            cutpoints.iter().filter(|&&c| c < v).count() as u32
                        }
                        StratumSpec::Fixed { weights, .. } => sample_weighted(weights, &mut rng),
                    })
                    .collect();
                let p = spec.propensity_for(&z);
                let d: i8 = if rng.random::<f64>() < p { 1 } else { -1 };
                let donor = rng.random::<f64>() < keep;
                let eps = noise.sample(&mut rng);
                let mu0 = spec.baseline_at(&x);
                let tau = spec.effect_at(&x);
                let y0 = if donor { mu0 / keep + eps } else { 0.0 };
                let y1 = y0 + tau;
                let y = if d == 1 { y1 } else { y0 };
                let extra = if spec.donation_indicator { vec![f64::from(u8::from(y > 0.0))] } else { vec![] };
                units.push(Unit { id: (i + 1).to_string(), y, d, z, x, extra });
                truth.push([tau, mu0, mu0 + tau, p]);
            }
            (units, truth)
        })
        .collect();
    let mut units = Vec::with_capacity(n);
    let mut truth_rows = Vec::with_capacity(n);
    for (u, t) in chunks {
        units.extend(u);
        truth_rows.extend(t);
    }
    let schema = Schema {
        features: spec.feature_names(),
        strata: spec
            .strata
            .iter()
            .map(|s| StratumVar { name: s.name().to_string(), labels: (0..s.categories()).map(|k| k.to_string()).collect() })
            .collect(),
        outcomes: if spec.donation_indicator { vec!["y2_donated".to_string()] } else { vec![] },
    };
    let true_action = units.iter().map(|u| spec.optimal_action(&u.x)).collect();
    let dataset = Dataset::new(schema, units, spec.cost)?;
    let truth = DgpTruth {
        true_cate: truth_rows.iter().map(|t| t[0]).collect(),
        true_action,
        mu_control: truth_rows.iter().map(|t| t[1]).collect(),
        mu_treated: truth_rows.iter().map(|t| t[2]).collect(),
        propensity: truth_rows.iter().map(|t| t[3]).collect(),
        values: benchmark_values(spec)?,
    };
    Ok((dataset, truth))
}

/// Exact feature grid with probabilities, when all features have small finite support.
fn feature_grid(spec: &DgpSpec) -> Option<Vec<(Vec<f64>, f64)>> {
    let supports: Vec<Vec<(f64, f64)>> = spec.features.iter().map(|f| f.dist.support()).collect::<Option<_>>()?;
    let size = supports.iter().try_fold(1usize, |acc, s| acc.checked_mul(s.len()))?;
    if size > MAX_GRID {
        return None;
    }
    let mut grid = vec![(Vec::with_capacity(supports.len()), 1.0)];
    for s in &supports {
        grid = grid
            .into_iter()
            .flat_map(|(x, w)| {
                s.iter().map(move |&(v, pv)| {
                    let mut x2 = x.clone();
                    x2.push(v);
                    (x2, w * pv)
                })
            })
            .collect();
    }
    Some(grid)
}

/// Expectation of `f(x)` over the feature distribution: exact on finite
/// grids, otherwise Monte Carlo with a fixed seed and its standard error.
fn expectation(spec: &DgpSpec, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> TrueValue {
    if let Some(grid) = feature_grid(spec) {
        return TrueValue { value: grid.iter().map(|(x, w)| w * f(x)).sum(), se: 0.0 };
    }
    let chunks = MONTE_CARLO_DRAWS.div_ceil(CHUNK);
    let parts: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(0x5eed_7a1e, c as u64);
            let m = CHUNK.min(MONTE_CARLO_DRAWS - c * CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..m {
                let v = f(&draw_features(spec, &mut rng));
                s += v;
                s2 += v * v;
            }
            (s, s2, m)
        })
        .collect();
    let (s, s2, m) = parts.iter().fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let mean = s / m as f64;
    let var = (s2 / m as f64 - mean * mean).max(0.0) * m as f64 / (m - 1) as f64;
    TrueValue { value: mean, se: (var / m as f64).sqrt() }
}

/// True expected net outcome `E[μ₋₁(x) + 1{π(x)=1}(τ(x) − c)]` of `rule`.
pub fn true_value(spec: &DgpSpec, rule: &Rule) -> Result<TrueValue> {
    spec.validate()?;
    let idx: Vec<usize> = rule
        .features()
        .iter()
        .map(|n| spec.feature_index(n).ok_or_else(|| Error::validation(format!("rule uses unknown feature `{n}`"))))
        .collect::<Result<_>>()?;
    let f = |x: &[f64]| {
        let sub: Vec<f64> = idx.iter().map(|&j| x[j]).collect();
        let a = rule.predict(&sub).expect("dimension checked");
        spec.baseline_at(x) + if a == 1 { spec.effect_at(x) - spec.cost } else { 0.0 }
    };
    Ok(expectation(spec, &f))
}

pub fn benchmark_values(spec: &DgpSpec) -> Result<BenchmarkValues> {
    spec.validate()?;
    let c = spec.cost;
    let none = expectation(spec, &|x| spec.baseline_at(x));
    let all = expectation(spec, &|x| spec.baseline_at(x) + spec.effect_at(x) - c);
    let optimal = expectation(spec, &|x| spec.baseline_at(x) + (spec.effect_at(x) - c).max(0.0));
    let share = expectation(spec, &|x| f64::from(u8::from(spec.optimal_action(x) == 1)));
    let gain_none = expectation(spec, &|x| (spec.effect_at(x) - c).max(0.0));
    let gain_all = expectation(spec, &|x| (c - spec.effect_at(x)).max(0.0));
    let random = TrueValue { value: 0.5 * (all.value + none.value), se: 0.5 * (all.se.powi(2) + none.se.powi(2)).sqrt() };
    Ok(BenchmarkValues {
        all_treat: all,
        no_treat: none,
        random,
        optimal,
        optimal_share_treated: share.value,
        optimal_vs_all: gain_all.value,
        optimal_vs_none: gain_none.value,
        optimal_vs_random: 0.5 * (gain_all.value + gain_none.value),
    })
}

fn f(name: &str, dist: FeatureDist) -> FeatureSpec {
    FeatureSpec { name: name.to_string(), dist }
}

/// Warm-list analog: zero-inflated, right-skewed gifts averaging about 17;
/// a third of the population (the most generous past givers) responds to the
/// gift well above its cost, everyone else responds weakly or negatively.
pub fn paper_analog_spec() -> DgpSpec {
    DgpSpec {
        name: "paper-analog".into(),
        version: 1,
        features: vec![
            f("x_past_giving", FeatureDist::Uniform { lo: 0.0, hi: 8.0, levels: Some(9) }),
            f("x_female", FeatureDist::Bernoulli { p: 0.5 }),
            f("x_age", FeatureDist::Uniform { lo: 20.0, hi: 80.0, levels: Some(7) }),
            f("x_distance", FeatureDist::Normal { mean: 5.0, sd: 2.0, round_to: Some(0.5) }),
        ],
        strata: vec![
            StratumSpec::Bins { name: "z_giving".into(), feature: "x_past_giving".into(), cutpoints: vec![2.5, 5.5] },
            StratumSpec::Bins { name: "z_female".into(), feature: "x_female".into(), cutpoints: vec![0.5] },
        ],
        propensity: PropensityTable::uniform(0.5),
        baseline: Surface::linear(8.0, &[("x_past_giving", 2.0)]),
        effect: Surface::step(
            "x_past_giving",
            5.5,
            Surface::step("x_female", 0.5, Surface::constant(-2.5), Surface::constant(-0.5)),
            Surface::constant(9.0),
        ),
        noise: NoiseSpec::Lognormal { mean: 16.0, sd: 30.0 },
        zero_inflation: 0.5,
        cost: 1.16,
        donation_indicator: true,
    }
}

/// Cold-list analog: almost nobody gives and the gift pays off only for a
/// sliver (about 1.4%) of the population.
pub fn cold_list_spec() -> DgpSpec {
    DgpSpec {
        name: "cold-list".into(),
        version: 1,
        features: vec![
            f("x_income", FeatureDist::Uniform { lo: 0.0, hi: 9.0, levels: Some(10) }),
            f("x_female", FeatureDist::Bernoulli { p: 0.5 }),
            f("x_age", FeatureDist::Uniform { lo: 20.0, hi: 80.0, levels: Some(7) }),
            f("x_distance", FeatureDist::Normal { mean: 5.0, sd: 2.0, round_to: Some(0.5) }),
        ],
        strata: vec![StratumSpec::Bins { name: "z_income".into(), feature: "x_income".into(), cutpoints: vec![4.5] }],
        propensity: PropensityTable::uniform(0.5),
        baseline: Surface::constant(0.18),
        effect: Surface::step(
            "x_income",
            8.5,
            Surface::constant(0.0),
            Surface::step("x_female", 0.5, Surface::constant(0.0), Surface::step("x_age", 65.0, Surface::constant(0.0), Surface::constant(2.0))),
        ),
        noise: NoiseSpec::Lognormal { mean: 5.0, sd: 10.0 },
        zero_inflation: 0.98,
        cost: 1.16,
        donation_indicator: true,
    }
}

/// Half the population has effect 3, the other half −1; baseline 10.
pub fn two_group_spec() -> DgpSpec {
    DgpSpec {
        name: "two-group".into(),
        version: 1,
        features: vec![
            f("x_group", FeatureDist::Bernoulli { p: 0.5 }),
            f("x_a", FeatureDist::Uniform { lo: 0.0, hi: 9.0, levels: Some(10) }),
            f("x_b", FeatureDist::Uniform { lo: -2.5, hi: 2.5, levels: Some(21) }),
        ],
        strata: vec![StratumSpec::Fixed { name: "z_cell".into(), weights: vec![0.5, 0.5] }],
        propensity: PropensityTable { default: 0.5, cells: [("z_cell=1".to_string(), 0.3)].into() },
        baseline: Surface::constant(10.0),
        effect: Surface::step("x_group", 0.5, Surface::constant(-1.0), Surface::constant(3.0)),
        noise: NoiseSpec::Normal { sd: 5.0 },
        zero_inflation: 0.0,
        cost: 1.16,
        donation_indicator: false,
    }
}

/// Same effect `tau` for everyone; outcomes depend on the features.
pub fn constant_effect_spec(tau: f64, noise_sd: f64) -> DgpSpec {
    DgpSpec {
        name: "constant-effect".into(),
        version: 1,
        features: vec![
            f("x_1", FeatureDist::Uniform { lo: 0.0, hi: 1.0, levels: None }),
            f("x_2", FeatureDist::Bernoulli { p: 0.4 }),
        ],
        strata: vec![StratumSpec::Bins { name: "z_1".into(), feature: "x_1".into(), cutpoints: vec![0.5] }],
        propensity: PropensityTable::uniform(0.5),
        baseline: Surface::linear(5.0, &[("x_1", 2.0), ("x_2", -1.0)]),
        effect: Surface::constant(tau),
        noise: if noise_sd > 0.0 { NoiseSpec::Normal { sd: noise_sd } } else { NoiseSpec::None },
        zero_inflation: 0.0,
        cost: 1.16,
        donation_indicator: false,
    }
}

/// Effect linear in `x_1`: `τ(x) = 2·x_1 − 1` with `x_1 ~ U(0, 2)`.
pub fn linear_cate_spec() -> DgpSpec {
    DgpSpec {
        name: "linear-cate".into(),
        version: 1,
        features: vec![
            f("x_1", FeatureDist::Uniform { lo: 0.0, hi: 2.0, levels: None }),
            f("x_2", FeatureDist::Normal { mean: 0.0, sd: 1.0, round_to: None }),
        ],
        strata: vec![StratumSpec::Bins { name: "z_1".into(), feature: "x_1".into(), cutpoints: vec![1.0] }],
        propensity: PropensityTable::uniform(0.5),
        baseline: Surface::linear(4.0, &[("x_1", 1.0), ("x_2", 0.5)]),
        effect: Surface::linear(-1.0, &[("x_1", 2.0)]),
        noise: NoiseSpec::Normal { sd: 4.0 },
        zero_inflation: 0.0,
        cost: 1.16,
        donation_indicator: false,
    }
}

/// Built-in specs by name.
pub fn preset(name: &str) -> Option<DgpSpec> {
    match name {
        "paper-analog" => Some(paper_analog_spec()),
        "cold-list" => Some(cold_list_spec()),
        "two-group" => Some(two_group_spec()),
        "constant-effect" => Some(constant_effect_spec(2.0, 3.0)),
        "linear-cate" => Some(linear_cate_spec()),
        _ => None,
    }
}

pub const PRESETS: [&str; 5] = ["paper-analog", "cold-list", "two-group", "constant-effect", "linear-cate"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyTree, TreeRule};

    #[test]
    fn noiseless_constant_effect_cells_differ_by_tau() {
        let mut spec = constant_effect_spec(2.0, 0.0);
        spec.features = vec![f("x_1", FeatureDist::Uniform { lo: 0.0, hi: 1.0, levels: Some(3) })];
        spec.baseline = Surface::linear(1.0, &[("x_1", 4.0)]);
        let (ds, truth) = generate(&spec, 2000, 3).unwrap();
        // Within each x level, treated minus control outcome is exactly 2.
        for level in [0.0, 0.5, 1.0] {
            let t: Vec<f64> = ds.units().iter().filter(|u| u.x[0] == level && u.treated()).map(|u| u.y).collect();
            let c: Vec<f64> = ds.units().iter().filter(|u| u.x[0] == level && !u.treated()).map(|u| u.y).collect();
            assert!(t.iter().all(|&v| (v - t[0]).abs() < 1e-12));
            assert!((t[0] - c[0] - 2.0).abs() < 1e-12);
        }
        assert!(truth.true_cate.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = paper_analog_spec();
        let (a, ta) = generate(&spec, 5000, 42).unwrap();
        let (b, tb) = generate(&spec, 5000, 42).unwrap();
        assert_eq!(a.units(), b.units());
        assert_eq!(ta, tb);
        let (c, _) = generate(&spec, 5000, 43).unwrap();
        assert_ne!(a.units(), c.units());
    }

    #[test]
    fn prefix_stable_across_sizes() {
        // Chunked substreams: the first chunk does not depend on n.
        let spec = two_group_spec();
        let (a, _) = generate(&spec, 100, 9).unwrap();
        let (b, _) = generate(&spec, 9000, 9).unwrap();
        assert_eq!(a.units(), &b.units()[..100]);
    }

    #[test]
    fn lognormal_noise_is_right_skewed() {
        let mut spec = constant_effect_spec(0.0, 0.0);
        spec.baseline = Surface::constant(16.0);
        spec.noise = NoiseSpec::Lognormal { mean: 16.0, sd: 30.0 };
        let (ds, _) = generate(&spec, 20_000, 1).unwrap();
        let y = ds.outcome("y").unwrap();
        let n = y.len() as f64;
        let m = y.iter().sum::<f64>() / n;
        let m2 = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let m3 = y.iter().map(|v| (v - m).powi(3)).sum::<f64>() / n;
        assert!(m3 / m2.powf(1.5) > 2.0);
        assert!((m - 16.0).abs() < 1.5, "{m}");
    }

    #[test]
    fn two_group_truth() {
        let v = benchmark_values(&two_group_spec()).unwrap();
        assert!((v.optimal.value - 10.92).abs() < 1e-12);
        assert!((v.all_treat.value - (10.0 + 1.0 - 1.16)).abs() < 1e-12);
        assert!((v.no_treat.value - 10.0).abs() < 1e-12);
        assert!((v.optimal_vs_none - 0.92).abs() < 1e-12);
        assert_eq!(v.optimal.se, 0.0);
    }

    #[test]
    fn true_value_of_rules() {
        let spec = two_group_spec();
        let names = spec.feature_names();
        let all = true_value(&spec, &Rule::constant(1, names.clone())).unwrap();
        assert!((all.value - 9.84).abs() < 1e-12);
        let none = true_value(&spec, &Rule::constant(-1, names.clone())).unwrap();
        assert!((none.value - 10.0).abs() < 1e-12);
        let tree = Rule::Tree(TreeRule {
            features: vec!["x_group".into()],
            max_depth: 1,
            tree: PolicyTree::split(0, 0.5, PolicyTree::constant(-1), PolicyTree::constant(1)),
        });
        assert!((true_value(&spec, &tree).unwrap().value - 10.92).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_for_continuous_features() {
        let spec = linear_cate_spec();
        let none = true_value(&spec, &Rule::constant(-1, spec.feature_names())).unwrap();
        // E[4 + x1 + 0.5 x2] = 5
        assert!(none.se > 0.0);
        assert!((none.value - 5.0).abs() < 4.0 * none.se + 1e-3);
    }

    #[test]
    fn paper_analog_calibration() {
        let spec = paper_analog_spec();
        let v = benchmark_values(&spec).unwrap();
        assert!((0.25..=0.40).contains(&v.optimal_share_treated));
        assert!(v.optimal_vs_none > 1.0 && v.optimal_vs_none < 3.0);
        assert!(v.optimal_vs_all > 1.0 && v.optimal_vs_all < 3.0);
        let (ds, _) = generate(&spec, 20_000, 7).unwrap();
        let y = ds.outcome("y").unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((14.0..=18.0).contains(&mean), "{mean}");
    }

    #[test]
    fn treated_share_per_cell_matches_propensity() {
        let spec = two_group_spec();
        let (ds, truth) = generate(&spec, 20_000, 5).unwrap();
        for cell in 0..2u32 {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.units()[i].z[0] == cell).collect();
            let p = truth.propensity[idx[0]];
            let share = idx.iter().filter(|&&i| ds.units()[i].treated()).count() as f64 / idx.len() as f64;
            let se = (p * (1.0 - p) / idx.len() as f64).sqrt();
            assert!((share - p).abs() < 3.0 * se, "cell {cell}: {share} vs {p}");
        }
    }

    #[test]
    fn observed_outcome_is_realized_potential_outcome() {
        let spec = paper_analog_spec();
        let (ds, truth) = generate(&spec, 3000, 2).unwrap();
        // y(1) − y(−1) = τ, so treated y − τ is the untreated potential outcome and zero-inflated units sit at τ.
        for (u, tau) in ds.units().iter().zip(&truth.true_cate) {
            let y0 = if u.treated() { u.y - tau } else { u.y };
            assert!(y0.is_finite());
        }
        let zeros = ds.units().iter().filter(|u| !u.treated() && u.y == 0.0).count();
        assert!(zeros > 0);
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = two_group_spec();
        spec.propensity.default = 1.0;
        assert!(generate(&spec, 10, 0).is_err());
        let mut spec = two_group_spec();
        spec.effect = Surface::step("x_missing", 0.0, Surface::constant(0.0), Surface::constant(1.0));
        assert!(generate(&spec, 10, 0).is_err());
        assert!(generate(&two_group_spec(), 0, 0).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = paper_analog_spec();
        let s = serde_json::to_string(&spec).unwrap();
        let back: DgpSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
    }
}
