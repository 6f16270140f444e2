//! Tabular ingestion: schema-driven CSV loading, preprocessing and
//! stratified resampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column declarations for a CSV file. Exactly one label column and at
/// least one feature column; names are unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let schema = Schema { columns };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let labels = self
            .columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Label)
            .count();
        if labels != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one label column, found {labels}"
            )));
        }
        if self.columns.len() < 2 {
            return Err(Error::Schema("schema declares no feature columns".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", c.name)));
            }
        }
        Ok(())
    }

    /// Parse a schema document: a TOML array of `[[columns]]` tables with
    /// `name` and `kind` keys.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Schema =
            toml::from_str(text).map_err(|e| Error::Schema(format!("invalid schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn label(&self) -> &Column {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::Label)
            .expect("validated schema has a label")
    }

    pub fn features(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(|c| c.kind != ColumnKind::Label)
    }
}

/// What a column of the feature matrix holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Numeric,
    /// Level ids into `levels` (sorted lexicographically); NaN when missing.
    Categorical { levels: Vec<String> },
    /// One-hot indicator produced from a categorical column.
    Indicator { source: String, level: String },
}

/// Feature matrix plus ground-truth labels. Missing values are NaN until
/// imputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<usize>,
    class_names: Vec<String>,
    feature_names: Vec<String>,
    feature_kinds: Vec<FeatureKind>,
}

impl Dataset {
    pub fn new(
        x: Array2<f64>,
        y: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
        feature_kinds: Vec<FeatureKind>,
    ) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if feature_names.len() != x.ncols() || feature_kinds.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: feature_names.len().min(feature_kinds.len()),
            });
        }
        if class_names.is_empty() {
            return Err(Error::InvalidInput("dataset has no classes".into()));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= class_names.len()) {
            return Err(Error::InvalidInput(format!(
                "label id {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok(Dataset {
            x,
            y,
            class_names,
            feature_names,
            feature_kinds,
        })
    }

    /// All-numeric dataset with generated names; handy for fixtures.
    pub fn from_numeric(x: Array2<f64>, y: Vec<usize>) -> Result<Self> {
        let n_classes = y.iter().max().map_or(1, |&m| m + 1);
        let p = x.ncols();
        Self::new(
            x,
            y,
            (0..n_classes).map(|c| format!("class_{c}")).collect(),
            (0..p).map(|j| format!("x{j}")).collect(),
            vec![FeatureKind::Numeric; p],
        )
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.feature_kinds
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn has_missing(&self) -> bool {
        self.x.iter().any(|v| v.is_nan())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    /// Rows `idx` in the given order; schema and class list unchanged.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
            feature_kinds: self.feature_kinds.clone(),
        }
    }
}

fn is_missing(token: &str) -> bool {
    token.is_empty() || token == "NA"
}

/// Read a CSV with a header row, validating it against `schema`.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();

    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::Schema(format!("duplicated header name `{h}`")));
        }
        if !schema.columns().iter().any(|c| &c.name == h) {
            return Err(Error::Schema(format!("unknown column `{h}`")));
        }
    }
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` missing from file")))
    };
    let label_pos = position(&schema.label().name)?;
    let feature_cols: Vec<(&Column, usize)> = schema
        .features()
        .map(|c| position(&c.name).map(|p| (c, p)))
        .collect::<Result<_>>()?;

    let mut raw_labels = Vec::new();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); feature_cols.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let label = record.get(label_pos).unwrap_or("");
        if is_missing(label) {
            return Err(Error::Parse {
                column: schema.label().name.clone(),
                row,
                message: "missing label".into(),
            });
        }
        raw_labels.push(label.to_owned());
        for (j, (_, pos)) in feature_cols.iter().enumerate() {
            raw[j].push(record.get(*pos).unwrap_or("").to_owned());
        }
    }
    let n = raw_labels.len();
    if n == 0 {
        return Err(Error::InvalidInput("file contains no data rows".into()));
    }

    let class_names: Vec<String> = raw_labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if class_names.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "label column `{}` has fewer than two classes",
            schema.label().name
        )));
    }
    let class_id: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let y = raw_labels.iter().map(|l| class_id[l.as_str()]).collect();

    let p = feature_cols.len();
    let mut x = Array2::zeros((n, p));
    let mut feature_kinds = Vec::with_capacity(p);
    for (j, (col, _)) in feature_cols.iter().enumerate() {
        match col.kind {
            ColumnKind::Numeric => {
                for (i, tok) in raw[j].iter().enumerate() {
                    x[[i, j]] = if is_missing(tok) {
                        f64::NAN
                    } else {
                        tok.parse::<f64>().map_err(|_| Error::Parse {
                            column: col.name.clone(),
                            row: i,
                            message: format!("non-numeric token `{tok}`"),
                        })?
                    };
                }
                feature_kinds.push(FeatureKind::Numeric);
            }
            ColumnKind::Categorical => {
                let levels: Vec<String> = raw[j]
                    .iter()
                    .filter(|t| !is_missing(t))
                    .cloned()
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                for (i, tok) in raw[j].iter().enumerate() {
                    x[[i, j]] = if is_missing(tok) {
                        f64::NAN
                    } else {
                        levels.binary_search(tok).expect("level collected above") as f64
                    };
                }
                feature_kinds.push(FeatureKind::Categorical { levels });
            }
            ColumnKind::Label => unreachable!("features exclude the label"),
        }
    }

    Dataset::new(
        x,
        y,
        class_names,
        feature_cols.iter().map(|(c, _)| c.name.clone()).collect(),
        feature_kinds,
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub scale_numeric: bool,
    pub one_hot: bool,
    pub impute_zero: bool,
}

/// Impute, expand categoricals and standardize numeric columns, in that
/// order. Standardization uses the population standard deviation; constant
/// columns become all zeros.
pub fn preprocess(ds: &Dataset, opts: PreprocessOptions) -> Dataset {
    let n = ds.n();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut kinds = Vec::new();

    for (j, kind) in ds.feature_kinds.iter().enumerate() {
        let col = ds.x.column(j);
        match kind {
            FeatureKind::Categorical { levels } if opts.one_hot => {
                for (l, level) in levels.iter().enumerate() {
                    columns.push(
                        col.iter()
                            .map(|&v| if v == l as f64 { 1.0 } else { 0.0 })
                            .collect(),
                    );
                    names.push(format!("{}={}", ds.feature_names[j], level));
                    kinds.push(FeatureKind::Indicator {
                        source: ds.feature_names[j].clone(),
                        level: level.clone(),
                    });
                }
            }
            FeatureKind::Numeric => {
                let mut values: Vec<f64> = col
                    .iter()
                    .map(|&v| if opts.impute_zero && v.is_nan() { 0.0 } else { v })
                    .collect();
                if opts.scale_numeric {
                    standardize(&mut values);
                }
                columns.push(values);
                names.push(ds.feature_names[j].clone());
                kinds.push(kind.clone());
            }
            _ => {
                columns.push(col.to_vec());
                names.push(ds.feature_names[j].clone());
                kinds.push(kind.clone());
            }
        }
    }

    let p = columns.len();
    let x = Array2::from_shape_fn((n, p), |(i, j)| columns[j][i]);
    Dataset {
        x,
        y: ds.y.clone(),
        class_names: ds.class_names.clone(),
        feature_names: names,
        feature_kinds: kinds,
    }
}

fn standardize(values: &mut [f64]) {
    let present: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if present.is_empty() {
        return;
    }
    let m = present.len() as f64;
    let mean = present.iter().sum::<f64>() / m;
    let var = present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let sd = var.sqrt();
    // Relative test so a column that is constant up to rounding maps to zero.
    let constant = sd <= 1e-12 * mean.abs().max(1.0);
    for v in values.iter_mut().filter(|v| !v.is_nan()) {
        *v = if constant { 0.0 } else { (*v - mean) / sd };
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
}

pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_kfold_labels(ds.y(), ds.class_names(), k, seed)
}

/// Shuffle each class independently, then deal its members round-robin
/// across folds. The dealing offset carries over between classes so fold
/// sizes stay balanced as well as per-class counts.
pub fn stratified_kfold_labels(
    y: &[usize],
    class_names: &[String],
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    let members = members_by_class(y, class_names.len());
    for (c, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < k {
            return Err(Error::ClassTooSmall {
                class: class_names[c].clone(),
                size: m.len(),
                required: k,
            });
        }
    }
    let mut fold_of = vec![0usize; y.len()];
    let mut offset = 0;
    for (c, mut m) in members.into_iter().enumerate() {
        m.shuffle(&mut seed::rng(seed::derive_seed(seed, c as u64)));
        for (r, &i) in m.iter().enumerate() {
            fold_of[i] = (offset + r) % k;
        }
        offset += m.len();
    }
    let folds = (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..y.len()).partition(|&i| fold_of[i] == f);
            Fold { train, test }
        })
        .collect();
    Ok(FoldPlan { folds, seed })
}

fn members_by_class(y: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        members[c].push(i);
    }
    members
}

/// Stratified hold-out split; returns sorted (train, test) indices. Every
/// class with at least two members keeps at least one row on each side.
pub fn stratified_split(y: &[usize], n_classes: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut m) in members_by_class(y, n_classes).into_iter().enumerate() {
        m.shuffle(&mut seed::rng(seed::derive_seed(seed, c as u64)));
        let mut n_test = (m.len() as f64 * test_fraction).round() as usize;
        if m.len() >= 2 {
            n_test = n_test.clamp(1, m.len() - 1);
        } else {
            n_test = 0;
        }
        test.extend_from_slice(&m[..n_test]);
        train.extend_from_slice(&m[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Stratified subsample of at most `cap` rows (sorted). Returns all rows
/// when `cap >= n`. Per-class quotas use largest remainders.
pub fn stratified_subsample(y: &[usize], n_classes: usize, cap: usize, seed: u64) -> Vec<usize> {
    let n = y.len();
    if cap >= n {
        return (0..n).collect();
    }
    let members = members_by_class(y, n_classes);
    let exact: Vec<f64> = members
        .iter()
        .map(|m| m.len() as f64 * cap as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = cap - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for c in order {
        if remaining == 0 {
            break;
        }
        if quota[c] < members[c].len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }
    let mut out = Vec::with_capacity(cap);
    for (c, mut m) in members.into_iter().enumerate() {
        m.shuffle(&mut seed::rng(seed::derive_seed(seed, c as u64)));
        out.extend_from_slice(&m[..quota[c]]);
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(cols: &[(&str, ColumnKind)]) -> Schema {
        Schema::new(
            cols.iter()
                .map(|(n, k)| Column {
                    name: n.to_string(),
                    kind: *k,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn schema_rejects_two_labels_and_duplicates() {
        let two = Schema::new(vec![
            Column { name: "a".into(), kind: ColumnKind::Label },
            Column { name: "b".into(), kind: ColumnKind::Label },
        ]);
        assert!(matches!(two, Err(Error::Schema(_))));
        let dup = Schema::new(vec![
            Column { name: "a".into(), kind: ColumnKind::Numeric },
            Column { name: "a".into(), kind: ColumnKind::Label },
        ]);
        assert!(matches!(dup, Err(Error::Schema(_))));
        let only_label = Schema::new(vec![Column { name: "y".into(), kind: ColumnKind::Label }]);
        assert!(only_label.is_err());
    }

    #[test]
    fn schema_parses_toml() {
        let s = Schema::from_toml_str(
            "[[columns]]\nname = \"x\"\nkind = \"numeric\"\n[[columns]]\nname = \"y\"\nkind = \"label\"\n",
        )
        .unwrap();
        assert_eq!(s.label().name, "y");
    }

    #[test]
    fn reads_mixed_columns() {
        let s = schema(&[
            ("x", ColumnKind::Numeric),
            ("c", ColumnKind::Categorical),
            ("y", ColumnKind::Label),
        ]);
        let csv = "c,x,y\nb,1.5,no\na,,yes\nc,NA,no\n";
        let ds = read_csv(csv.as_bytes(), &s).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.p(), 2);
        assert_eq!(ds.class_names(), ["no", "yes"]);
        assert_eq!(ds.y(), [0, 1, 0]);
        assert_eq!(ds.x()[[0, 0]], 1.5);
        assert!(ds.x()[[1, 0]].is_nan() && ds.x()[[2, 0]].is_nan());
        assert_eq!(ds.x().column(1).to_vec(), vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn duplicated_header_is_error() {
        let s = schema(&[("x", ColumnKind::Numeric), ("y", ColumnKind::Label)]);
        let err = read_csv("x,x,y\n1,2,a\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(err, Error::Schema(_)), "{err}");
    }

    #[test]
    fn unknown_column_and_bad_token() {
        let s = schema(&[("x", ColumnKind::Numeric), ("y", ColumnKind::Label)]);
        assert!(matches!(
            read_csv("x,z,y\n1,2,a\n".as_bytes(), &s),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            read_csv("x,y\nabc,a\n2,b\n".as_bytes(), &s),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let s = schema(&[("x", ColumnKind::Numeric), ("y", ColumnKind::Label)]);
        assert!(matches!(load_csv("/nonexistent/file.csv", &s), Err(Error::Io { .. })));
    }

    #[test]
    fn standardization_and_one_hot() {
        let s = schema(&[
            ("x", ColumnKind::Numeric),
            ("c", ColumnKind::Categorical),
            ("y", ColumnKind::Label),
        ]);
        let ds = read_csv("x,c,y\n1,b,p\n2,a,q\n3,c,p\n".as_bytes(), &s).unwrap();
        let out = preprocess(
            &ds,
            PreprocessOptions { scale_numeric: true, one_hot: true, impute_zero: false },
        );
        assert_eq!(out.p(), 4);
        let x = out.x().column(0);
        let mean = x.sum() / 3.0;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        for i in 0..3 {
            let row_sum: f64 = (1..4).map(|j| out.x()[[i, j]]).sum();
            assert_eq!(row_sum, 1.0);
        }
        assert_eq!(out.feature_names()[1], "c=a");
        assert_eq!(out.y(), ds.y());
    }

    #[test]
    fn impute_happens_before_scaling() {
        let s = schema(&[("x", ColumnKind::Numeric), ("y", ColumnKind::Label)]);
        let ds = read_csv("x,y\n,a\n2,b\n".as_bytes(), &s).unwrap();
        let imputed = preprocess(&ds, PreprocessOptions { impute_zero: true, ..Default::default() });
        assert_eq!(imputed.x()[[0, 0]], 0.0);
        let scaled = preprocess(
            &ds,
            PreprocessOptions { impute_zero: true, scale_numeric: true, one_hot: false },
        );
        assert_eq!(scaled.x().column(0).to_vec(), vec![-1.0, 1.0]);
    }

    #[test]
    fn constant_column_scales_to_zero() {
        let ds = Dataset::from_numeric(ndarray::array![[5.0], [5.0], [5.0]], vec![0, 1, 0]).unwrap();
        let out = preprocess(&ds, PreprocessOptions { scale_numeric: true, ..Default::default() });
        assert!(out.x().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kfold_rejects_small_class() {
        let y: Vec<usize> = [vec![0; 10], vec![1; 5]].concat();
        let names = vec!["big".to_string(), "small".to_string()];
        match stratified_kfold_labels(&y, &names, 7, 1) {
            Err(Error::ClassTooSmall { class, .. }) => assert_eq!(class, "small"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn subsample_respects_cap_and_strata() {
        let y: Vec<usize> = [vec![0; 70], vec![1; 30]].concat();
        let idx = stratified_subsample(&y, 2, 10, 3);
        assert_eq!(idx.len(), 10);
        assert_eq!(idx.iter().filter(|&&i| y[i] == 0).count(), 7);
        assert_eq!(stratified_subsample(&y, 2, 500, 3).len(), 100);
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let y: Vec<usize> = [vec![0; 50], vec![1; 50], vec![2; 50]].concat();
        let (train, test) = stratified_split(&y, 3, 0.2, 9);
        assert_eq!(test.len(), 30);
        assert_eq!(train.len() + test.len(), 150);
        assert!(test.iter().all(|i| train.binary_search(i).is_err()));
        for c in 0..3 {
            assert_eq!(test.iter().filter(|&&i| y[i] == c).count(), 10);
        }
    }
}
