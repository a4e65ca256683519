//! Dataset representation, CSV ingestion and export, and fold splitting.
//!
//! Treatment is always held as `-1` (control) / `+1` (treated) in memory,
//! whatever the coding in the source file. Stratum columns are categorical:
//! raw labels are re-coded to dense integers in order of first appearance and
//! the mapping is kept in the schema so the file can be written back.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stratum variable and its code book.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumVar {
    pub name: String,
    /// Raw label for each dense code; `labels.len()` is the category count.
    pub labels: Vec<String>,
}

impl StratumVar {
    pub fn categories(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<String>,
    pub strata: Vec<StratumVar>,
    pub outcomes: Vec<String>,
}

impl Schema {
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    pub fn outcome_index(&self, name: &str) -> Option<usize> {
        self.outcomes.iter().position(|f| f == name)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.as_str()) {
                return Err(Error::validation(format!("duplicate feature name `{f}`")));
            }
        }
        let mut out = HashSet::new();
        for o in &self.outcomes {
            if !out.insert(o.as_str()) {
                return Err(Error::validation(format!("duplicate outcome name `{o}`")));
            }
            if seen.contains(o.as_str()) || o == PRIMARY_OUTCOME {
                return Err(Error::validation(format!("outcome name `{o}` clashes with another column")));
            }
        }
        for s in &self.strata {
            if s.labels.is_empty() {
                return Err(Error::validation(format!("stratum variable `{}` has no categories", s.name)));
            }
        }
        Ok(())
    }
}

/// Name of the primary outcome column.
pub const PRIMARY_OUTCOME: &str = "y";

/// One experimental subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: String,
    pub y: f64,
    /// `+1` treated, `-1` control.
    pub d: i8,
    pub z: Vec<u32>,
    pub x: Vec<f64>,
    /// Extra outcomes aligned with `Schema::outcomes`.
    pub extra: Vec<f64>,
}

impl Unit {
    pub fn treated(&self) -> bool {
        self.d == 1
    }
}

/// Immutable, validated collection of units plus the treatment cost.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: Schema,
    units: Vec<Unit>,
    cost: f64,
}

impl Dataset {
    pub fn new(schema: Schema, units: Vec<Unit>, cost: f64) -> Result<Self> {
        schema.validate()?;
        if !(cost.is_finite() && cost >= 0.0) {
            return Err(Error::validation(format!("treatment cost must be finite and non-negative, got {cost}")));
        }
        if units.is_empty() {
            return Err(Error::validation("dataset has zero rows"));
        }
        for (row, u) in units.iter().enumerate() {
            if u.d != 1 && u.d != -1 {
                return Err(Error::validation(format!("row {}: treatment must be -1 or +1, got {}", row + 1, u.d)));
            }
            if !u.y.is_finite() || u.extra.iter().any(|v| !v.is_finite()) || u.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("row {}: non-finite value", row + 1)));
            }
            if u.x.len() != schema.features.len()
                || u.z.len() != schema.strata.len()
                || u.extra.len() != schema.outcomes.len()
            {
                return Err(Error::validation(format!("row {}: width does not match schema", row + 1)));
            }
            for (code, var) in u.z.iter().zip(&schema.strata) {
                if *code as usize >= var.categories() {
                    return Err(Error::validation(format!(
                        "row {}: stratum `{}` code {} out of range",
                        row + 1,
                        var.name,
                        code
                    )));
                }
            }
        }
        let treated = units.iter().filter(|u| u.treated()).count();
        if treated == 0 || treated == units.len() {
            return Err(Error::validation("dataset needs at least one treated and one control unit"));
        }
        Ok(Dataset { schema, units, cost })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn with_cost(mut self, cost: f64) -> Result<Self> {
        if !(cost.is_finite() && cost >= 0.0) {
            return Err(Error::validation(format!("treatment cost must be finite and non-negative, got {cost}")));
        }
        self.cost = cost;
        Ok(self)
    }

    /// Values of the named outcome column (`y` or one of the extra outcomes).
    pub fn outcome(&self, name: &str) -> Result<Vec<f64>> {
        if name == PRIMARY_OUTCOME {
            return Ok(self.units.iter().map(|u| u.y).collect());
        }
        let j = self
            .schema
            .outcome_index(name)
            .ok_or_else(|| Error::validation(format!("unknown outcome column `{name}`")))?;
        Ok(self.units.iter().map(|u| u.extra[j]).collect())
    }

    pub fn treatments(&self) -> Vec<i8> {
        self.units.iter().map(|u| u.d).collect()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.units.iter().map(|u| u.x.clone()).collect()
    }

    /// Feature rows restricted to (and ordered by) the named features.
    pub fn features_named(&self, names: &[String]) -> Result<Vec<Vec<f64>>> {
        let idx = self.feature_indices(names)?;
        Ok(self.units.iter().map(|u| idx.iter().map(|&j| u.x[j]).collect()).collect())
    }

    pub fn feature_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        let missing: Vec<&str> =
            names.iter().filter(|n| self.schema.feature_index(n).is_none()).map(String::as_str).collect();
        if !missing.is_empty() {
            return Err(Error::validation(format!("missing features: {}", missing.join(", "))));
        }
        Ok(names.iter().map(|n| self.schema.feature_index(n).unwrap()).collect())
    }

    /// A new dataset holding the units at `indices`, in that order.
    ///
    /// Fails when the subset lacks either arm.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let units = indices.iter().map(|&i| self.units[i].clone()).collect();
        Dataset::new(self.schema.clone(), units, self.cost)
    }

    /// Restrict to a subset of features (e.g. only socioeconomic variables).
    pub fn select_features(&self, names: &[String]) -> Result<Dataset> {
        let idx = self.feature_indices(names)?;
        let mut schema = self.schema.clone();
        schema.features = names.to_vec();
        let units = self
            .units
            .iter()
            .map(|u| Unit { x: idx.iter().map(|&j| u.x[j]).collect(), ..u.clone() })
            .collect();
        Dataset::new(schema, units, self.cost)
    }
}

/// How the treatment column is coded in the source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatmentCoding {
    /// `-1` control, `1` treated.
    #[default]
    PlusMinus,
    /// `0` control, `1` treated.
    ZeroOne,
}

impl TreatmentCoding {
    fn decode(self, raw: &str) -> Option<i8> {
        let v: f64 = raw.trim().parse().ok()?;
        if v.fract() != 0.0 || v.abs() > 1.0 {
            return None;
        }
        match (self, v as i8) {
            (TreatmentCoding::PlusMinus, 1) | (TreatmentCoding::ZeroOne, 1) => Some(1),
            (TreatmentCoding::PlusMinus, -1) | (TreatmentCoding::ZeroOne, 0) => Some(-1),
            _ => None,
        }
    }

    fn encode(self, d: i8) -> &'static str {
        match (self, d) {
            (_, 1) => "1",
            (TreatmentCoding::PlusMinus, _) => "-1",
            (TreatmentCoding::ZeroOne, _) => "0",
        }
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub id_column: String,
    pub outcome_column: String,
    pub treatment_column: String,
    pub coding: TreatmentCoding,
    pub stratum_prefix: String,
    pub feature_prefix: String,
    /// Columns with this prefix are loaded as extra outcomes.
    pub extra_outcome_prefix: String,
    /// Additional extra-outcome columns named explicitly.
    pub extra_outcomes: Vec<String>,
    pub cost: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            id_column: "id".into(),
            outcome_column: PRIMARY_OUTCOME.into(),
            treatment_column: "d".into(),
            coding: TreatmentCoding::PlusMinus,
            stratum_prefix: "z_".into(),
            feature_prefix: "x_".into(),
            extra_outcome_prefix: "y2_".into(),
            extra_outcomes: Vec::new(),
            cost: 1.16,
        }
    }
}

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::validation(format!("row {row}: cannot parse `{raw}` in column `{col}`")))?;
    if !v.is_finite() {
        return Err(Error::validation(format!("row {row}: non-finite value in column `{col}`")));
    }
    Ok(v)
}

/// Reads a dataset from CSV text.
pub fn read_csv<R: std::io::Read>(reader: R, config: &IngestConfig) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).comment(Some(b'#')).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::validation(format!("missing column `{name}`")))
    };
    let id_col = find(&config.id_column)?;
    let y_col = find(&config.outcome_column)?;
    let d_col = find(&config.treatment_column)?;
    let mut extra_cols: Vec<usize> = Vec::new();
    for name in &config.extra_outcomes {
        extra_cols.push(find(name)?);
    }
    let reserved = [id_col, y_col, d_col];
    let mut z_cols = Vec::new();
    let mut x_cols = Vec::new();
    for (j, h) in headers.iter().enumerate() {
        if reserved.contains(&j) || extra_cols.contains(&j) {
            continue;
        }
        if !config.stratum_prefix.is_empty() && h.starts_with(&config.stratum_prefix) {
            z_cols.push(j);
        } else if !config.feature_prefix.is_empty() && h.starts_with(&config.feature_prefix) {
            x_cols.push(j);
        } else if !config.extra_outcome_prefix.is_empty() && h.starts_with(&config.extra_outcome_prefix) {
            extra_cols.push(j);
        }
    }

    let mut books: Vec<HashMap<String, u32>> = vec![HashMap::new(); z_cols.len()];
    let mut strata: Vec<StratumVar> =
        z_cols.iter().map(|&j| StratumVar { name: headers[j].clone(), labels: Vec::new() }).collect();
    let mut units = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |j: usize| record.get(j).unwrap_or("");
        let d_raw = cell(d_col);
        let d = config.coding.decode(d_raw).ok_or_else(|| {
            Error::validation(format!("row {row}: treatment value `{d_raw}` outside the declared coding"))
        })?;
        let y = parse_cell(cell(y_col), row, &headers[y_col])?;
        let x = x_cols.iter().map(|&j| parse_cell(cell(j), row, &headers[j])).collect::<Result<Vec<_>>>()?;
        let extra = extra_cols.iter().map(|&j| parse_cell(cell(j), row, &headers[j])).collect::<Result<Vec<_>>>()?;
        let mut z = Vec::with_capacity(z_cols.len());
        for (s, &j) in z_cols.iter().enumerate() {
            let label = cell(j).trim().to_string();
            if label.is_empty() {
                return Err(Error::validation(format!("row {row}: missing value in column `{}`", headers[j])));
            }
            let next = books[s].len() as u32;
            let code = *books[s].entry(label.clone()).or_insert_with(|| {
                strata[s].labels.push(label);
                next
            });
            z.push(code);
        }
        units.push(Unit { id: cell(id_col).to_string(), y, d, z, x, extra });
    }
    if units.is_empty() {
        return Err(Error::validation("dataset has zero rows"));
    }
    let schema = Schema {
        features: x_cols.iter().map(|&j| headers[j].clone()).collect(),
        strata,
        outcomes: extra_cols.iter().map(|&j| headers[j].clone()).collect(),
    };
    Dataset::new(schema, units, config.cost)
}

pub fn load_csv(path: impl AsRef<Path>, config: &IngestConfig) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::validation(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, config)
}

/// Writes the dataset back in the ingestion layout; strata are written as their raw labels.
pub fn write_csv<W: std::io::Write>(dataset: &Dataset, coding: TreatmentCoding, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let s = dataset.schema();
    let mut header = vec!["id".to_string(), PRIMARY_OUTCOME.to_string(), "d".to_string()];
    header.extend(s.strata.iter().map(|v| v.name.clone()));
    header.extend(s.features.iter().cloned());
    header.extend(s.outcomes.iter().cloned());
    w.write_record(&header)?;
    for u in dataset.units() {
        let mut rec = vec![u.id.clone(), u.y.to_string(), coding.encode(u.d).to_string()];
        rec.extend(u.z.iter().zip(&s.strata).map(|(&c, v)| v.labels[c as usize].clone()));
        rec.extend(u.x.iter().map(f64::to_string));
        rec.extend(u.extra.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Code book per stratum column: raw label → dense code.
pub fn code_book(schema: &Schema) -> BTreeMap<String, BTreeMap<String, u32>> {
    schema
        .strata
        .iter()
        .map(|v| (v.name.clone(), v.labels.iter().enumerate().map(|(i, l)| (l.clone(), i as u32)).collect()))
        .collect()
}

/// Per-unit fold index in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds {
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl Folds {
    /// `(training indices, held-out indices)` for fold `f`.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, &a) in self.assignment.iter().enumerate() {
            if a == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }
}

/// Seeded random partition of `n` units into `k` folds whose sizes differ by at most one.
///
/// A uniform permutation is cut into contiguous blocks; the first `n mod k`
/// blocks get the extra unit.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<Folds> {
    if k < 2 || k > n {
        return Err(Error::validation(format!("fold count must satisfy 2 <= k <= N ({n}), got {k}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        for &i in &perm[pos..pos + size] {
            assignment[i] = f;
        }
        pos += size;
    }
    Ok(Folds { k, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR_ROWS: &str = "id,y,d,z_s,x_a,x_b\n1,10,1,A,0.5,1\n2,0,0,B,1.5,0\n3,3.25,1,A,2,1\n4,7,0,B,-1,0\n";

    fn zero_one() -> IngestConfig {
        IngestConfig { coding: TreatmentCoding::ZeroOne, ..Default::default() }
    }

    #[test]
    fn loads_zero_one_coding() {
        let ds = read_csv(FOUR_ROWS.as_bytes(), &zero_one()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.treatments(), vec![1, -1, 1, -1]);
        assert_eq!(ds.schema().features, vec!["x_a", "x_b"]);
    }

    #[test]
    fn rejects_out_of_coding_treatment() {
        let csv = "id,y,d\n1,1,1\n2,1,2\n";
        let err = read_csv(csv.as_bytes(), &zero_one()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn stratum_codes_in_first_appearance_order() {
        let csv = "id,y,d,z_s\n1,1,1,A\n2,2,0,B\n3,3,0,A\n";
        let ds = read_csv(csv.as_bytes(), &zero_one()).unwrap();
        let codes: Vec<u32> = ds.units().iter().map(|u| u.z[0]).collect();
        assert_eq!(codes, vec![0, 1, 0]);
        let book = code_book(ds.schema());
        assert_eq!(book["z_s"]["A"], 0);
        assert_eq!(book["z_s"]["B"], 1);
        // Re-export and reload reproduces the labels.
        let mut buf = Vec::new();
        write_csv(&ds, TreatmentCoding::ZeroOne, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("1,1,1,A") && text.contains("2,2,0,B") && text.contains("3,3,0,A"), "{text}");
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "id,y\n1,1\n";
        let err = read_csv(csv.as_bytes(), &zero_one()).unwrap_err();
        assert!(err.to_string().contains("`d`"), "{err}");
    }

    #[test]
    fn unparsable_and_non_finite_cells_cite_row() {
        let csv = "id,y,d,x_a\n1,1,1,0\n2,1,0,abc\n";
        assert!(read_csv(csv.as_bytes(), &zero_one()).unwrap_err().to_string().contains("row 2"));
        let csv = "id,y,d,x_a\n1,NaN,1,0\n2,1,0,1\n";
        assert!(read_csv(csv.as_bytes(), &zero_one()).unwrap_err().to_string().contains("row 1"));
    }

    #[test]
    fn zero_rows_rejected() {
        let err = read_csv("id,y,d\n".as_bytes(), &zero_one()).unwrap_err();
        assert!(err.to_string().contains("zero rows"));
    }

    #[test]
    fn one_arm_rejected() {
        let err = read_csv("id,y,d\n1,1,1\n2,2,1\n".as_bytes(), &zero_one()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn extra_outcomes_by_prefix() {
        let csv = "id,y,d,y2_two_year,x_a\n1,1,1,5,0\n2,1,-1,6,1\n";
        let ds = read_csv(csv.as_bytes(), &IngestConfig::default()).unwrap();
        assert_eq!(ds.outcome("y2_two_year").unwrap(), vec![5.0, 6.0]);
        assert!(ds.outcome("nope").is_err());
    }

    #[test]
    fn leave_one_out_folds() {
        let f = split_folds(20, 20, 3).unwrap();
        assert!(f.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn folds_deterministic_and_balanced() {
        assert_eq!(split_folds(10, 2, 9).unwrap(), split_folds(10, 2, 9).unwrap());
        let mut sizes = split_folds(10, 3, 1).unwrap().sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
    }

    #[test]
    fn fold_count_out_of_range() {
        assert!(split_folds(10, 1, 0).is_err());
        assert!(split_folds(10, 11, 0).is_err());
    }
}
