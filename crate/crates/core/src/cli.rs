//! Command-line front end: `simulate → fit-nuisance → score → learn →
//! evaluate / crossval → transfer / match → report`, plus the heterogeneity
//! diagnostics.
//!
//! Every subcommand's options form a serializable config. A JSON file given
//! with `--config` supplies defaults that command-line flags override. Output
//! files embed the SHA-256 hash of the resolved config and the seed: JSON
//! outputs as fields of an envelope, CSV outputs as a leading `#` comment line
//! (which every reader in this crate skips).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, write_csv, Dataset, IngestConfig, TreatmentCoding};
use crate::error::{Error, Result};
use crate::eval::{cross_validate, evaluate, report_table, score_dataset, transfer_evaluate, CrossValConfig, ValueReport};
use crate::heterogeneity::{blp_test, default_grid, extreme_group_summary, sorted_effects, DEFAULT_REPS};
use crate::matching::{
    caliper_match, matched_standardized_difference, shared_features, standardized_difference, transfer_with_radius_sweep,
    write_sweep_csv, DEFAULT_RADIUS,
};
use crate::nuisance::{nuisance_predictions, NuisancePredictions, NuisanceSpec, PropensitySpec, StratumDesign, DEFAULT_FLOOR};
use crate::policy::{learn, LearnerSpec, LogitSpec, Rule, DEFAULT_MIN_LEAF, MAX_EXACT_DEPTH};
use crate::scores::{compute_aipw, ScoreSet};
use crate::synthetic::{generate, preset, DgpSpec, PRESETS};

const TOOL: &str = "policy-targeting";

/// Console summaries; a closed stdout (e.g. piped into `head`) is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! say_raw {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

#[derive(Parser, Debug)]
#[command(name = "policy-targeting", version, about = "Learn and evaluate treatment-targeting rules from randomized experiments")]
struct Cli {
    /// Print diagnostics as one JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    /// JSON file with option defaults for the subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic campaign with known ground truth.
    Simulate(SimulateArgs),
    /// Fit propensity and outcome models and write per-unit predictions.
    FitNuisance(FitNuisanceArgs),
    /// Compute AIPW scores.
    Score(ScoreArgs),
    /// Learn a targeting rule on the whole sample.
    Learn(LearnArgs),
    /// Evaluate a rule in-sample against the three benchmarks.
    Evaluate(EvaluateArgs),
    /// K-fold out-of-sample evaluation of a learner.
    Crossval(CrossvalArgs),
    /// Apply a frozen rule to another sample.
    Transfer(TransferArgs),
    /// Sorted CATE percentiles with a uniform bootstrap band.
    SortedEffects(SortedEffectsArgs),
    /// Best-linear-predictor heterogeneity test.
    BlpTest(BlpTestArgs),
    /// Caliper matching between two samples, balance, and radius sweep.
    Match(MatchArgs),
    /// Combine evaluation reports into one table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct DataOpts {
    /// Input CSV (columns id, y, d, z_*, x_*, y2_*).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Outcome to analyse: `y` or an extra outcome column.
    #[arg(long)]
    outcome: Option<String>,
    /// Treatment cost c.
    #[arg(long)]
    cost: Option<f64>,
    /// Treatment column coding: plus-minus or zero-one.
    #[arg(long)]
    treatment_coding: Option<String>,
    #[arg(long)]
    id_column: Option<String>,
    #[arg(long)]
    outcome_column: Option<String>,
    #[arg(long)]
    treatment_column: Option<String>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct NuisanceOpts {
    /// Propensity model: logit or population.
    #[arg(long)]
    propensity: Option<String>,
    /// JSON map from stratum cell to assignment probability (or a simulate truth file).
    #[arg(long)]
    population_table: Option<PathBuf>,
    /// Stratum design: main-effects or saturated.
    #[arg(long)]
    design: Option<String>,
    /// Lower/upper clip for fitted propensities.
    #[arg(long)]
    floor: Option<f64>,
    /// Cross-fit the nuisance models with this many folds.
    #[arg(long)]
    cross_fit: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct LearnerOpts {
    /// exact-tree, greedy-tree, weighted-logit or constant.
    #[arg(long)]
    learner: Option<String>,
    /// Tree depth (greedy tree without --depth cross-validates it).
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    /// Weighted-logit terms: baseline or flexible.
    #[arg(long)]
    logit_spec: Option<String>,
    /// Action of the constant rule (1 or -1).
    #[arg(long, allow_hyphen_values = true)]
    action: Option<i8>,
    /// Comma-separated feature subset.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct SimulateArgs {
    /// Preset name or path to a JSON spec.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    treatment_coding: Option<String>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct FitNuisanceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataOpts,
    #[command(flatten)]
    #[serde(flatten)]
    nuisance: NuisanceOpts,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct ScoreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataOpts,
    #[command(flatten)]
    #[serde(flatten)]
    nuisance: NuisanceOpts,
    /// Use predictions written by fit-nuisance instead of refitting.
    #[arg(long)]
    nuisance_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct LearnArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataOpts,
    #[command(flatten)]
    #[serde(flatten)]
    nuisance: NuisanceOpts,
    #[command(flatten)]
    #[serde(flatten)]
    learner: LearnerOpts,
    /// Use scores written by `score` instead of recomputing them.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct EvaluateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataOpts,
    #[command(flatten)]
    #[serde(flatten)]
    nuisance: NuisanceOpts,
    /// Rule JSON written by `learn`.
    #[arg(long)]
    rule: Option<PathBuf>,
    /// Cost used in evaluation (default: the data cost).
    #[arg(long)]
    eval_cost: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct CrossvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataOpts,
    #[command(flatten)]
    #[serde(flatten)]
    nuisance: NuisanceOpts,
    #[command(flatten)]
    #[serde(flatten)]
    learner: LearnerOpts,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eval_cost: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct TransferArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataOpts,
    #[command(flatten)]
    #[serde(flatten)]
    nuisance: NuisanceOpts,
    #[arg(long)]
    rule: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct SortedEffectsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataOpts,
    #[arg(long)]
    reps: Option<usize>,
    /// Percentile grid as lo:hi:step (default 5:95:1).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Curve CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG plot of the curve.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct BlpTestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataOpts,
    #[command(flatten)]
    #[serde(flatten)]
    nuisance: NuisanceOpts,
    #[arg(long)]
    k: Option<usize>,
    /// Also compare the top and bottom tail fractions of the CATE distribution.
    #[arg(long)]
    tail: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct MatchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataOpts,
    #[command(flatten)]
    #[serde(flatten)]
    nuisance: NuisanceOpts,
    /// Sample A (the sample the rule was learned on).
    #[arg(long)]
    a: Option<PathBuf>,
    /// Sample B (the sample the rule is transferred to).
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long)]
    radius: Option<Radius>,
    /// Comma-separated radii for the sweep (`inf` allowed).
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<Radius>>,
    /// Rule to evaluate on the matched B units at each radius.
    #[arg(long)]
    rule: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Matched pairs CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sweep_out: Option<PathBuf>,
    #[arg(long)]
    balance_out: Option<PathBuf>,
}

/// Caliper radius that keeps `inf` intact through JSON configs, where it is written as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Radius(f64);

impl std::str::FromStr for Radius {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a radius"))?;
        if v > 0.0 {
            Ok(Radius(v))
        } else {
            Err(format!("radius must be positive, got {s}"))
        }
    }
}

impl Serialize for Radius {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for Radius {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Number(v) => v.to_string(),
            Raw::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
struct ReportArgs {
    /// Report JSON files from evaluate, crossval or transfer.
    #[arg(long = "input", value_delimiter = ',')]
    inputs: Option<Vec<PathBuf>>,
    /// Row labels (default: file stems).
    #[arg(long = "label", value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    digits: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Provenance stamped on every output.
struct Stamp {
    command: &'static str,
    hash: String,
    seed: u64,
    config: Value,
}

impl Stamp {
    fn new<T: Serialize>(command: &'static str, config: &T, seed: u64) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let canonical = serde_json::to_string(&json!({ "command": command, "config": config }))?;
        let hash = Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Stamp { command, hash, seed, config })
    }

    fn write_json<R: Serialize>(&self, path: &Path, result: &R) -> Result<()> {
        let doc = json!({
            "tool": TOOL,
            "command": self.command,
            "config_hash": self.hash,
            "seed": self.seed,
            "config": self.config,
            "result": result,
        });
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn write_csv(&self, path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# {TOOL} command={} config_hash={} seed={}", self.command, self.hash, self.seed)?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn write_text(&self, path: &Path, text: &str) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# {TOOL} command={} config_hash={} seed={}", self.command, self.hash, self.seed)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }
}

/// Merges flags over the config file: a flag that was given wins, otherwise the file's value is used.
fn resolve<T: Serialize + DeserializeOwned + Default>(flags: &T, config: Option<&Value>) -> Result<T> {
    let known = match serde_json::to_value(T::default())? {
        Value::Object(m) => m,
        _ => Map::new(),
    };
    let mut merged = match config {
        None => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(Error::validation("config file must hold a JSON object")),
    };
    if let Some(bad) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(Error::validation(format!("unknown config key `{bad}`")));
    }
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::validation(format!("config: {e}")))
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::validation(format!("missing required option --{flag}")))
}

fn parse_coding(s: Option<&str>) -> Result<TreatmentCoding> {
    match s.unwrap_or("plus-minus") {
        "plus-minus" => Ok(TreatmentCoding::PlusMinus),
        "zero-one" => Ok(TreatmentCoding::ZeroOne),
        other => Err(Error::validation(format!("unknown treatment coding `{other}` (plus-minus | zero-one)"))),
    }
}

fn ingest(o: &DataOpts) -> Result<IngestConfig> {
    let mut cfg = IngestConfig { coding: parse_coding(o.treatment_coding.as_deref())?, ..IngestConfig::default() };
    if let Some(c) = o.cost {
        cfg.cost = c;
    }
    if let Some(s) = &o.id_column {
        cfg.id_column = s.clone();
    }
    if let Some(s) = &o.outcome_column {
        cfg.outcome_column = s.clone();
    }
    if let Some(s) = &o.treatment_column {
        cfg.treatment_column = s.clone();
    }
    Ok(cfg)
}

fn load_from(path: &Path, o: &DataOpts) -> Result<Dataset> {
    let cfg = ingest(o)?;
    load_csv(path, &cfg).map_err(|e| match e {
        Error::Io(io) => Error::validation(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn load(o: &DataOpts) -> Result<Dataset> {
    load_from(require(&o.data, "data")?, o)
}

fn outcome(o: &DataOpts) -> String {
    o.outcome.clone().unwrap_or_else(|| crate::data::PRIMARY_OUTCOME.to_string())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
}

fn population_table(path: &Path) -> Result<BTreeMap<String, f64>> {
    let v = read_json(path)?;
    let table = v
        .pointer("/result/population_propensities")
        .or_else(|| v.get("population_propensities"))
        .cloned()
        .unwrap_or(v);
    serde_json::from_value(table).map_err(|e| Error::validation(format!("population table: {e}")))
}

fn nuisance_spec(o: &NuisanceOpts) -> Result<NuisanceSpec> {
    let design = match o.design.as_deref().unwrap_or("main-effects") {
        "main-effects" => StratumDesign::MainEffects,
        "saturated" => StratumDesign::Saturated,
        other => return Err(Error::validation(format!("unknown design `{other}` (main-effects | saturated)"))),
    };
    let propensity = match o.propensity.as_deref().unwrap_or("logit") {
        "logit" => PropensitySpec::Logit,
        "population" => PropensitySpec::Population {
            table: population_table(require(&o.population_table, "population-table")?)?,
        },
        other => return Err(Error::validation(format!("unknown propensity model `{other}` (logit | population)"))),
    };
    let floor = o.floor.unwrap_or(DEFAULT_FLOOR);
    if !(0.0..0.5).contains(&floor) {
        return Err(Error::validation(format!("propensity floor must lie in [0, 0.5), got {floor}")));
    }
    if let Some(k) = o.cross_fit {
        if k < 2 {
            return Err(Error::validation("cross-fitting needs at least 2 folds"));
        }
    }
    Ok(NuisanceSpec { design, propensity, floor, cross_fit_folds: o.cross_fit })
}

fn learner_spec(o: &LearnerOpts, seed: u64) -> Result<LearnerSpec> {
    Ok(match o.learner.as_deref().unwrap_or("exact-tree") {
        "exact-tree" => {
            let depth = o.depth.unwrap_or(2);
            if depth == 0 || depth > MAX_EXACT_DEPTH {
                return Err(Error::validation(format!("exact search depth ≤ {MAX_EXACT_DEPTH} (and ≥ 1), got {depth}")));
            }
            LearnerSpec::ExactTree { depth }
        }
        "greedy-tree" => LearnerSpec::GreedyTree { depth: o.depth, min_leaf: o.min_leaf.unwrap_or(DEFAULT_MIN_LEAF), seed },
        "weighted-logit" => LearnerSpec::WeightedLogit {
            spec: match o.logit_spec.as_deref().unwrap_or("baseline") {
                "baseline" => LogitSpec::Baseline,
                "flexible" => LogitSpec::Flexible,
                other => return Err(Error::validation(format!("unknown logit spec `{other}` (baseline | flexible)"))),
            },
        },
        "constant" => {
            let action = o.action.unwrap_or(-1);
            if action != 1 && action != -1 {
                return Err(Error::validation("constant action must be 1 or -1"));
            }
            LearnerSpec::Constant { action }
        }
        other => {
            return Err(Error::validation(format!(
                "unknown learner `{other}` (exact-tree | greedy-tree | weighted-logit | constant)"
            )))
        }
    })
}

fn read_rule(path: &Path) -> Result<Rule> {
    let v = read_json(path)?;
    let rule = v.pointer("/result/rule").or_else(|| v.get("rule")).cloned().unwrap_or(v);
    serde_json::from_value(rule).map_err(|e| Error::validation(format!("{}: not a rule: {e}", path.display())))
}

fn read_report(path: &Path) -> Result<ValueReport> {
    let v = read_json(path)?;
    let r = v.get("result").cloned().unwrap_or(v);
    serde_json::from_value(r).map_err(|e| Error::validation(format!("{}: not a value report: {e}", path.display())))
}

fn truth_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into());
    (out.with_file_name(format!("{stem}.truth.csv")), out.with_file_name(format!("{stem}.truth.json")))
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let name = a.spec.clone().unwrap_or_else(|| "paper-analog".into());
    let spec: DgpSpec = match preset(&name) {
        Some(s) => s,
        None if Path::new(&name).exists() => serde_json::from_value(read_json(Path::new(&name))?)
            .map_err(|e| Error::validation(format!("{name}: invalid spec: {e}")))?,
        None => return Err(Error::validation(format!("unknown spec `{name}`; presets: {}", PRESETS.join(", ")))),
    };
    let n = a.n.unwrap_or(20_000);
    let seed = a.seed.unwrap_or(0);
    let out = require(&a.out, "out")?.clone();
    let coding = parse_coding(a.treatment_coding.as_deref())?;
    let stamp = Stamp::new("simulate", &a, seed)?;
    let (ds, truth) = generate(&spec, n, seed)?;
    stamp.write_csv(&out, |w| write_csv(&ds, coding, w))?;
    let ids: Vec<String> = ds.units().iter().map(|u| u.id.clone()).collect();
    let (truth_csv, truth_json) = truth_paths(&out);
    stamp.write_csv(&truth_csv, |w| truth.write_csv(&ids, w))?;
    let doc = json!({
        "spec": spec,
        "values": truth.values,
        "population_propensities": spec.population_propensities(),
    });
    stamp.write_json(&truth_json, &doc)?;
    say!(
        "simulate: {n} units of `{}` written to {} (truth in {}, {}); true optimal share treated {:.3}, gain vs no-treat {:.3}",
        spec.name,
        out.display(),
        truth_csv.display(),
        truth_json.display(),
        truth.values.optimal_share_treated,
        truth.values.optimal_vs_none
    );
    Ok(())
}

fn cmd_fit_nuisance(a: FitNuisanceArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let spec = nuisance_spec(&a.nuisance)?;
    let seed = a.seed.unwrap_or(0);
    let y = outcome(&a.data);
    let stamp = Stamp::new("fit-nuisance", &a, seed)?;
    let preds = nuisance_predictions(&ds, &spec, &y, seed)?;
    let out = require(&a.out, "out")?;
    stamp.write_csv(out, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["id", "propensity", "mu_treated", "mu_control"])?;
        for (i, u) in ds.units().iter().enumerate() {
            c.write_record([
                u.id.clone(),
                preds.propensity[i].to_string(),
                preds.mu_treated[i].to_string(),
                preds.mu_control[i].to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    say!(
        "fit-nuisance: {} units, {} predictions written to {}",
        ds.len(),
        if preds.cross_fitted { "cross-fitted" } else { "in-sample" },
        out.display()
    );
    Ok(())
}

fn read_predictions(path: &Path, ds: &Dataset) -> Result<NuisancePredictions> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut p = NuisancePredictions { propensity: vec![], mu_treated: vec![], mu_control: vec![], cross_fitted: false };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let unit = ds.units().get(i).ok_or_else(|| Error::validation("nuisance file has more rows than the data"))?;
        if rec.get(0) != Some(unit.id.as_str()) {
            return Err(Error::validation(format!("nuisance file row {}: id does not match the data", i + 1)));
        }
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::validation(format!("nuisance file row {}: bad number", i + 1)))
        };
        p.propensity.push(num(1)?);
        p.mu_treated.push(num(2)?);
        p.mu_control.push(num(3)?);
    }
    if p.propensity.len() != ds.len() {
        return Err(Error::validation("nuisance file has fewer rows than the data"));
    }
    Ok(p)
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let seed = a.seed.unwrap_or(0);
    let y = outcome(&a.data);
    let stamp = Stamp::new("score", &a, seed)?;
    let preds = match &a.nuisance_file {
        Some(path) => read_predictions(path, &ds)?,
        None => nuisance_predictions(&ds, &nuisance_spec(&a.nuisance)?, &y, seed)?,
    };
    let scores = compute_aipw(&ds, &preds, &y)?;
    let out = require(&a.out, "out")?;
    stamp.write_csv(out, |w| scores.write_csv(w))?;
    let ate = crate::scores::estimate_ate_aipw(&scores)?;
    say!("score: {} units, AIPW ATE {:.4} (SE {:.4}), scores written to {}", ds.len(), ate.estimate, ate.se, out.display());
    Ok(())
}

fn cmd_learn(a: LearnArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(0);
    let spec = learner_spec(&a.learner, seed)?;
    let ds = load(&a.data)?;
    let y = outcome(&a.data);
    let stamp = Stamp::new("learn", &a, seed)?;
    let scores = match &a.scores {
        Some(path) => {
            let s = ScoreSet::read_csv(File::open(path)?, &y, ds.cost())?;
            if s.ids.len() != ds.len() || s.ids.iter().zip(ds.units()).any(|(i, u)| *i != u.id) {
                return Err(Error::validation("score file rows do not match the data"));
            }
            s
        }
        None => score_dataset(&ds, &nuisance_spec(&a.nuisance)?, &y, seed)?,
    };
    let names = a.learner.features.clone().unwrap_or_else(|| ds.schema().features.clone());
    let x = ds.features_named(&names)?;
    let report = learn(&spec, &scores.net_reward, &x, &names)?;
    let out = require(&a.out, "out")?;
    stamp.write_json(out, &report)?;
    let share = report.rule.assign(&ds)?.iter().filter(|&&v| v == 1).count() as f64 / ds.len() as f64;
    say!(
        "learn: objective {:.4}, in-sample share treated {:.3}, {} candidate splits; rule written to {}",
        report.objective,
        share,
        report.candidate_splits,
        out.display()
    );
    Ok(())
}

fn print_report(label: &str, r: &ValueReport) {
    say_raw!("{}", report_table(&[(label.to_string(), r)], 3));
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let seed = a.seed.unwrap_or(0);
    let y = outcome(&a.data);
    let rule = read_rule(require(&a.rule, "rule")?)?;
    let stamp = Stamp::new("evaluate", &a, seed)?;
    let scores = score_dataset(&ds, &nuisance_spec(&a.nuisance)?, &y, seed)?;
    let actions = rule.assign(&ds)?;
    let report = evaluate(&scores, &actions, a.eval_cost.unwrap_or(ds.cost()))?;
    if let Some(out) = &a.out {
        stamp.write_json(out, &report)?;
    }
    print_report("in-sample", &report);
    Ok(())
}

fn cmd_crossval(a: CrossvalArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(0);
    let learner = learner_spec(&a.learner, seed)?;
    let ds = load(&a.data)?;
    let cfg = CrossValConfig {
        outcome: outcome(&a.data),
        learner,
        nuisance: nuisance_spec(&a.nuisance)?,
        folds: a.k.unwrap_or(crate::eval::DEFAULT_FOLDS),
        seed,
        eval_cost: a.eval_cost,
        features: a.learner.features.clone(),
    };
    let stamp = Stamp::new("crossval", &a, seed)?;
    let report = cross_validate(&ds, &cfg)?;
    if let Some(out) = &a.out {
        stamp.write_json(out, &report)?;
    }
    print_report(&format!("{}-fold CV", cfg.folds), &report);
    Ok(())
}

fn cmd_transfer(a: TransferArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let seed = a.seed.unwrap_or(0);
    let rule = read_rule(require(&a.rule, "rule")?)?;
    let stamp = Stamp::new("transfer", &a, seed)?;
    let report = transfer_evaluate(&rule, &ds, &nuisance_spec(&a.nuisance)?, &outcome(&a.data), seed)?;
    if let Some(out) = &a.out {
        stamp.write_json(out, &report)?;
    }
    print_report("transferred", &report);
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::validation(format!("grid must be lo:hi:step, got `{s}`")))?;
    let [lo, hi, step] = parts[..] else {
        return Err(Error::validation(format!("grid must be lo:hi:step, got `{s}`")));
    };
    if !(step > 0.0 && lo <= hi) {
        return Err(Error::validation(format!("grid must be lo:hi:step with step > 0, got `{s}`")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| lo + step * i as f64).collect())
}

fn cmd_sorted_effects(a: SortedEffectsArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let seed = a.seed.unwrap_or(0);
    let grid = match &a.grid {
        Some(g) => parse_grid(g)?,
        None => default_grid(),
    };
    let stamp = Stamp::new("sorted-effects", &a, seed)?;
    let curve = sorted_effects(&ds, &outcome(&a.data), &grid, a.reps.unwrap_or(DEFAULT_REPS), seed)?;
    if let Some(out) = &a.out {
        stamp.write_csv(out, |w| curve.write_csv(w))?;
    }
    if let Some(plot) = &a.plot {
        let mut w = BufWriter::new(File::create(plot)?);
        writeln!(w, "<!-- {TOOL} command=sorted-effects config_hash={} seed={} -->", stamp.hash, stamp.seed)?;
        curve.write_svg(ds.cost(), &mut w)?;
        w.flush()?;
    }
    let last = curve.estimate.len() - 1;
    say!(
        "sorted-effects: CATE at percentile {} = {:.3}, at {} = {:.3}; sup-t critical value {:.3} over {} replications",
        curve.percentiles[0], curve.estimate[0], curve.percentiles[last], curve.estimate[last], curve.critical_value, curve.reps
    );
    Ok(())
}

fn cmd_blp_test(a: BlpTestArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let seed = a.seed.unwrap_or(0);
    let y = outcome(&a.data);
    let stamp = Stamp::new("blp-test", &a, seed)?;
    let scores = score_dataset(&ds, &nuisance_spec(&a.nuisance)?, &y, seed)?;
    let report = blp_test(&ds, &scores, a.k.unwrap_or(crate::eval::DEFAULT_FOLDS), seed)?;
    let extremes = a.tail.map(|q| extreme_group_summary(&ds, &y, q)).transpose()?;
    if let Some(out) = &a.out {
        stamp.write_json(out, &json!({ "blp": report, "extreme_groups": extremes }))?;
    }
    let avg = report.average_effect;
    match report.heterogeneity_loading {
        Some(l) => say!(
            "blp-test: average effect {:.4} (SE {:.4}, p {:.4}); heterogeneity loading {:.4} (SE {:.4}, p {:.4})",
            avg.estimate, avg.se, avg.p_value, l.estimate, l.se, l.p_value
        ),
        None => say!(
            "blp-test: average effect {:.4} (SE {:.4}, p {:.4}); heterogeneity loading undefined (proxy has no variance)",
            avg.estimate, avg.se, avg.p_value
        ),
    }
    if let Some(g) = extremes {
        say!("extreme groups (top vs bottom {:.0}% of CATE, {} units each; no multiple-testing correction):", 100.0 * g.q, g.group_size);
        for r in &g.rows {
            say!(
                "  {:<20} {:>10.3} {:>10.3} {:>10.3} ({:.3})",
                r.feature, r.top_mean, r.bottom_mean, r.difference.estimate, r.difference.se
            );
        }
    }
    Ok(())
}

fn cmd_match(a: MatchArgs) -> Result<()> {
    let sa = load_from(require(&a.a, "a")?, &a.data)?;
    let sb = load_from(require(&a.b, "b")?, &a.data)?;
    let seed = a.seed.unwrap_or(0);
    let radius = a.radius.map_or(DEFAULT_RADIUS, |r| r.0);
    let stamp = Stamp::new("match", &a, seed)?;
    let m = caliper_match(&sa, &sb, radius)?;
    if let Some(out) = &a.out {
        stamp.write_csv(out, |w| m.write_csv(&sa, &sb, w))?;
    }
    let mut balance = Vec::new();
    say!("match: radius {radius}, {} of {} A units matched ({} distinct B units)", m.pairs.len(), sa.len(), m.matched_b().len());
    say!("  {:<20} {:>12} {:>12}", "feature", "std.diff all", "matched");
    for f in shared_features(&sa, &sb) {
        let full = standardized_difference(&sa, &sb, &f)?;
        let matched = if m.pairs.is_empty() { None } else { Some(matched_standardized_difference(&sa, &sb, &m, &f)?) };
        say!("  {:<20} {:>12.2} {:>12}", f, full, matched.map_or("-".to_string(), |v| format!("{v:.2}")));
        balance.push(json!({ "feature": f, "full": full, "matched": matched }));
    }
    if let Some(out) = &a.balance_out {
        stamp.write_json(out, &json!({ "radius": Radius(radius), "matched_pairs": m.pairs.len(), "unmatched_a": m.unmatched_a, "balance": balance }))?;
    }
    if let Some(rule_path) = &a.rule {
        let rule = read_rule(rule_path)?;
        let radii = a.radii.as_ref().map_or_else(|| vec![0.05, 0.1, 0.25, f64::INFINITY], |r| r.iter().map(|r| r.0).collect());
        let sweep = transfer_with_radius_sweep(&rule, &sa, &sb, &radii, &nuisance_spec(&a.nuisance)?, &outcome(&a.data), seed)?;
        if let Some(out) = &a.sweep_out {
            stamp.write_csv(out, |w| write_sweep_csv(&sweep, w))?;
        }
        for e in &sweep {
            match &e.report {
                Some(r) => say!(
                    "  radius {:<6} B units {:>7}  share treated {:.3}  vs no-treat {:.3} ({:.3})",
                    e.radius, e.matched_b, r.share_treated, r.vs_none.estimate, r.vs_none.se
                ),
                None => say!("  radius {:<6} no matched units", e.radius),
            }
        }
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let inputs = require(&a.inputs, "input")?;
    if inputs.is_empty() {
        return Err(Error::validation("report needs at least one --input"));
    }
    let labels: Vec<String> = match &a.labels {
        Some(l) if l.len() == inputs.len() => l.clone(),
        Some(_) => return Err(Error::validation("give one --label per --input")),
        None => inputs.iter().map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()).collect(),
    };
    let reports: Vec<ValueReport> = inputs.iter().map(|p| read_report(p)).collect::<Result<_>>()?;
    let rows: Vec<(String, &ValueReport)> = labels.into_iter().zip(&reports).collect();
    let table = report_table(&rows, a.digits.unwrap_or(3));
    let stamp = Stamp::new("report", &a, 0)?;
    if let Some(out) = &a.out {
        stamp.write_text(out, &table)?;
    }
    say_raw!("{table}");
    Ok(())
}

fn dispatch(command: Command, config: Option<&Value>) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(resolve(&a, config)?),
        Command::FitNuisance(a) => cmd_fit_nuisance(resolve(&a, config)?),
        Command::Score(a) => cmd_score(resolve(&a, config)?),
        Command::Learn(a) => cmd_learn(resolve(&a, config)?),
        Command::Evaluate(a) => cmd_evaluate(resolve(&a, config)?),
        Command::Crossval(a) => cmd_crossval(resolve(&a, config)?),
        Command::Transfer(a) => cmd_transfer(resolve(&a, config)?),
        Command::SortedEffects(a) => cmd_sorted_effects(resolve(&a, config)?),
        Command::BlpTest(a) => cmd_blp_test(resolve(&a, config)?),
        Command::Match(a) => cmd_match(resolve(&a, config)?),
        Command::Report(a) => cmd_report(resolve(&a, config)?),
    }
}

/// Exit code for an error: 2 for bad input, 3 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn report_error(e: &Error, json_errors: bool) {
    if json_errors {
        eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string(), "exit_code": exit_code(e) }));
    } else {
        eprintln!("error: {e}");
    }
}

/// Parses `argv` (including the program name), runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let json_errors = argv.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            if json_errors {
                report_error(&Error::validation(e.to_string().trim().to_string()), true);
            } else {
                let _ = e.print();
            }
            return 2;
        }
    };
    let result = (|| {
        let config = cli.config.as_deref().map(read_json).transpose()?;
        let pool = match cli.threads {
            Some(0) => return Err(Error::validation("--threads must be at least 1")),
            Some(t) => rayon::ThreadPoolBuilder::new().num_threads(t).build(),
            None => rayon::ThreadPoolBuilder::new().build(),
        }
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))?;
        pool.install(|| dispatch(cli.command, config.as_ref()))
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e, cli.json_errors);
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let flags = CrossvalArgs { k: Some(5), ..CrossvalArgs::default() };
        let cfg = json!({ "k": 10, "seed": 3, "depth": 1 });
        let r = resolve(&flags, Some(&cfg)).unwrap();
        assert_eq!(r.k, Some(5));
        assert_eq!(r.seed, Some(3));
        assert_eq!(r.learner.depth, Some(1));
    }

    #[test]
    fn unknown_config_key_rejected() {
        let cfg = json!({ "kk": 10 });
        assert!(matches!(resolve(&CrossvalArgs::default(), Some(&cfg)), Err(Error::Validation(_))));
    }

    #[test]
    fn infinite_radius_survives_config_round_trip() {
        let flags = MatchArgs { radii: Some(vec![Radius(0.1), Radius(f64::INFINITY)]), ..MatchArgs::default() };
        let v = serde_json::to_value(&flags).unwrap();
        assert_eq!(v["radii"], json!([0.1, "inf"]));
        let back: MatchArgs = serde_json::from_value(v).unwrap();
        assert_eq!(back.radii, flags.radii);
        assert!("0".parse::<Radius>().is_err());
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("5:95:1").unwrap().len(), 91);
        assert_eq!(parse_grid("10:90:40").unwrap(), vec![10.0, 50.0, 90.0]);
        assert!(parse_grid("5:95").is_err());
    }

    #[test]
    fn hash_is_stable_and_config_sensitive() {
        let a = CrossvalArgs { k: Some(5), ..CrossvalArgs::default() };
        let b = CrossvalArgs { k: Some(6), ..CrossvalArgs::default() };
        let h = |x: &CrossvalArgs| Stamp::new("crossval", x, 0).unwrap().hash;
        assert_eq!(h(&a), h(&a.clone()));
        assert_ne!(h(&a), h(&b));
        assert_eq!(h(&a).len(), 64);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["policy-targeting", "no-such-command"]), 2);
        assert_eq!(run(["policy-targeting", "learn", "--depth", "5"]), 2);
        assert_eq!(exit_code(&Error::numerical("x")), 3);
    }
}
