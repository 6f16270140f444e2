//! Config-driven experiment: per dataset, tune a forest, build each point
//! representation, sweep K, score, select K per metric and correlate
//! forest quality with clustering quality across datasets.

mod config;
mod export;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Dataset, PreprocessOptions, Schema};
use crate::embed::{embed_proximities, Embedding};
use crate::error::{Error, Result};
use crate::forest::{
    fit_forest, fit_forest_with_oob_coverage, gap_proximities, gap_proximities_to, grid_search_cv, Forest,
    ForestParams, GridScore,
};
use crate::kmeans::{kmeans, ClusteringResult};
use crate::linalg::sym_eigen;
use crate::metrics::{
    self, calinski_harabasz, classification_scores, davies_bouldin, dispersion_floor, external_scores,
    gap_from_dispersions, optimal_k, pairwise_distances, raw_optimal_k, reference_samples, silhouette_from_distances,
    Metric, ScoreTable,
};
use crate::mmc::{build_pairs, learn_metric, transform_points};
use crate::seed::{self, stream_id};

pub use config::{default_schema_path, DatasetSpec, ExperimentConfig, Representation};
pub use export::{export_report, summarize_run_dir, ARTIFACTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfReport {
    pub best: ForestParams,
    pub cv_scores: Vec<GridScore>,
    pub cv_weighted_f1: f64,
    pub test_accuracy: f64,
    pub test_weighted_f1: f64,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub t: usize,
    pub m: usize,
    pub stress: f64,
    pub stress_by_dim: Vec<(usize, f64)>,
    pub entropy: Vec<f64>,
    pub n_embedded: usize,
    pub forest_params: ForestParams,
    /// Largest |row sum - 1| of the off-diagonal proximities.
    pub max_row_sum_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmcSummary {
    pub n_similar: usize,
    pub n_dissimilar: usize,
    pub objective_start: f64,
    pub objective_end: f64,
    pub accepted_steps: usize,
    pub min_projection_eigenvalue: f64,
}

/// Outcome for one (dataset, representation) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub representation: Representation,
    pub error: Option<String>,
    pub preprocessing: PreprocessOptions,
    pub seed: u64,
    /// Rows the representation was built on (the subsample for large
    /// embeddings); external scores always cover every row.
    pub n_points: usize,
    pub scores: ScoreTable,
    pub k_c: BTreeMap<Metric, usize>,
    /// Literal optimum of each curve (argmin for lower-is-better metrics).
    pub k_c_raw: BTreeMap<Metric, usize>,
    pub k_c_abs_diff: BTreeMap<Metric, usize>,
    pub accuracy_at_class_count: Option<f64>,
    pub values_at_class_count: BTreeMap<Metric, f64>,
    pub values_at_k_c: BTreeMap<Metric, f64>,
    pub embedding: Option<EmbedSummary>,
    pub mmc: Option<MmcSummary>,
    /// Two-column projection for plotting, with the row ids it covers.
    #[serde(skip)]
    pub scatter: Option<(Vec<usize>, Array2<f64>)>,
    /// Full embedding coordinates, rows aligned with the scatter ids.
    #[serde(skip)]
    pub embedding_coords: Option<Array2<f64>>,
    /// Wall-clock seconds; not exported.
    #[serde(skip)]
    pub seconds: f64,
    /// Full-data assignments per swept K.
    #[serde(skip)]
    pub assignments: Vec<(usize, Vec<usize>)>,
}

impl CellReport {
    fn failed(representation: Representation, preprocessing: PreprocessOptions, seed: u64, reason: String) -> Self {
        CellReport {
            representation,
            error: Some(reason),
            preprocessing,
            seed,
            n_points: 0,
            scores: ScoreTable::default(),
            k_c: BTreeMap::new(),
            k_c_raw: BTreeMap::new(),
            k_c_abs_diff: BTreeMap::new(),
            accuracy_at_class_count: None,
            values_at_class_count: BTreeMap::new(),
            values_at_k_c: BTreeMap::new(),
            embedding: None,
            mmc: None,
            scatter: None,
            embedding_coords: None,
            seconds: 0.0,
            assignments: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub name: String,
    pub seed: u64,
    pub error: Option<String>,
    pub n: usize,
    pub p: usize,
    pub n_classes: usize,
    pub class_names: Vec<String>,
    #[serde(skip)]
    pub labels: Vec<usize>,
    pub rf: Option<RfReport>,
    pub rf_error: Option<String>,
    /// Wall-clock seconds of forest tuning and scoring; not exported.
    #[serde(skip)]
    pub rf_seconds: f64,
    pub cells: Vec<CellReport>,
}

impl DatasetReport {
    pub fn cell(&self, rep: Representation) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.representation == rep)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub metric: Metric,
    pub representation: Representation,
    /// Pearson r against forest weighted F1; `None` when undefined.
    pub r: Option<f64>,
    /// Standard deviation of the metric across the datasets used.
    pub std: Option<f64>,
    pub n_datasets: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub representations: Vec<Representation>,
    pub datasets: Vec<DatasetReport>,
    /// Metric values at K = number of classes.
    pub correlations: Vec<CorrelationEntry>,
    /// Metric values at each metric's own selected K.
    pub correlations_at_k_c: Vec<CorrelationEntry>,
}

impl RunReport {
    pub fn dataset(&self, name: &str) -> Option<&DatasetReport> {
        self.datasets.iter().find(|d| d.name == name)
    }

    pub fn correlation(&self, metric: Metric, rep: Representation) -> Option<&CorrelationEntry> {
        self.correlations
            .iter()
            .find(|c| c.metric == metric && c.representation == rep)
    }
}

pub fn preprocessing_for(rep: Representation) -> PreprocessOptions {
    PreprocessOptions {
        scale_numeric: rep == Representation::Euclidean,
        one_hot: true,
        impute_zero: true,
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

fn isolate<T>(f: impl FnOnce() -> Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(format!("internal error: {}", panic_message(p))),
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if !spec.path.exists() {
        return Err(Error::InvalidInput(format!(
            "dataset unavailable: {} not found",
            spec.path.display()
        )));
    }
    let schema = Schema::load(spec.schema_path())?;
    dataset::load_csv(&spec.path, &schema)
}

/// Run every configured dataset and representation. Failures are recorded
/// per cell; only an invalid config is an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let reps = cfg.representations()?;
    let datasets: Vec<DatasetReport> = cfg
        .datasets
        .par_iter()
        .map(|spec| run_dataset(cfg, &reps, spec))
        .collect();
    let correlations = correlate(&datasets, &reps, |c, m| c.values_at_class_count.get(&m).copied());
    let correlations_at_k_c = correlate(&datasets, &reps, |c, m| c.values_at_k_c.get(&m).copied());
    Ok(RunReport {
        seed: cfg.seed,
        config: cfg.clone(),
        representations: reps,
        datasets,
        correlations,
        correlations_at_k_c,
    })
}

pub fn dataset_seed(master: u64, name: &str) -> u64 {
    seed::derive_seed(master, stream_id(name))
}

fn run_dataset(cfg: &ExperimentConfig, reps: &[Representation], spec: &DatasetSpec) -> DatasetReport {
    let ds_seed = dataset_seed(cfg.seed, &spec.name);
    let mut report = DatasetReport {
        name: spec.name.clone(),
        seed: ds_seed,
        error: None,
        n: 0,
        p: 0,
        n_classes: 0,
        class_names: Vec::new(),
        labels: Vec::new(),
        rf: None,
        rf_error: None,
        rf_seconds: 0.0,
        cells: Vec::new(),
    };
    let raw = match isolate(|| load_dataset(spec)) {
        Ok(ds) => ds,
        Err(reason) => {
            log::warn!("{}: {reason}", spec.name);
            report.cells = reps
                .iter()
                .map(|&r| CellReport::failed(r, preprocessing_for(r), 0, reason.clone()))
                .collect();
            report.error = Some(reason);
            return report;
        }
    };
    report.n = raw.n();
    report.p = raw.p();
    report.n_classes = raw.n_classes();
    report.class_names = raw.class_names().to_vec();
    report.labels = raw.y().to_vec();
    log::info!("{}: n={} p={} classes={}", spec.name, raw.n(), raw.p(), raw.n_classes());

    let unscaled = dataset::preprocess(&raw, preprocessing_for(Representation::Mmc));
    let started = Instant::now();
    let rf = isolate(|| forest_scores(cfg, &unscaled, ds_seed));
    report.rf_seconds = started.elapsed().as_secs_f64();
    match rf {
        Ok(rf) => {
            log::info!(
                "{}: forest {:?} test accuracy {:.4} ({:.1}s)",
                spec.name,
                rf.best,
                rf.test_accuracy,
                report.rf_seconds
            );
            report.rf = Some(rf);
        }
        Err(e) => {
            log::warn!("{}: forest evaluation failed: {e}", spec.name);
            report.rf_error = Some(e);
        }
    }
    let best = report.rf.as_ref().map(|r| r.best);
    report.cells = reps
        .par_iter()
        .map(|&rep| {
            let cell_seed = seed::derive_seed(ds_seed, stream_id(rep.name()));
            let prep = preprocessing_for(rep);
            let started = Instant::now();
            let mut cell = match isolate(|| run_cell(cfg, &raw, rep, cell_seed, best)) {
                Ok(cell) => cell,
                Err(reason) => {
                    log::warn!("{} / {}: {reason}", spec.name, rep);
                    CellReport::failed(rep, prep, cell_seed, reason)
                }
            };
            cell.seconds = started.elapsed().as_secs_f64();
            log::info!(
                "{} / {}: accuracy at class count {:?} ({:.1}s)",
                spec.name,
                rep,
                cell.accuracy_at_class_count,
                cell.seconds
            );
            cell
        })
        .collect();
    report
}

/// Hold-out evaluation: stratified split, grid search by cross-validation
/// on the training part, refit of the best point, scores on the test part.
pub fn forest_scores(cfg: &ExperimentConfig, ds: &Dataset, ds_seed: u64) -> Result<RfReport> {
    let (train_idx, test_idx) = dataset::stratified_split(
        ds.y(),
        ds.n_classes(),
        cfg.test_fraction,
        seed::derive_seed(ds_seed, stream_id("rf_split")),
    );
    let train = ds.select_rows(&train_idx);
    let test = ds.select_rows(&test_idx);
    let folds = dataset::stratified_kfold(&train, cfg.cv_folds, seed::derive_seed(ds_seed, stream_id("rf_folds")))?;
    let grid = grid_search_cv(&train, &cfg.forest_grid()?, &folds, seed::derive_seed(ds_seed, stream_id("rf_cv")))?;
    let forest = fit_forest(&train, grid.best, seed::derive_seed(ds_seed, stream_id("rf_refit")))?;
    let pred = forest.predict(test.x().view())?;
    let scores = classification_scores(test.y(), &pred)?;
    let cv_weighted_f1 = grid
        .scores
        .iter()
        .find(|s| s.params == grid.best)
        .map(|s| s.mean)
        .unwrap_or(f64::NAN);
    Ok(RfReport {
        best: grid.best,
        cv_scores: grid.scores,
        cv_weighted_f1,
        test_accuracy: scores.accuracy,
        test_weighted_f1: scores.weighted_f1,
        n_train: train.n(),
        n_test: test.n(),
    })
}

/// Points to cluster for one representation, plus how to extend cluster
/// labels from those points to every row of the dataset.
struct Prepared {
    points: Array2<f64>,
    /// Row id of each point.
    rows: Vec<usize>,
    /// For every dataset row, the index into `points` whose cluster it takes.
    extend: Vec<usize>,
    embedding: Option<EmbedSummary>,
    mmc: Option<MmcSummary>,
}

fn prepare(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    rep: Representation,
    cell_seed: u64,
    best: Option<ForestParams>,
) -> Result<Prepared> {
    let n = ds.n();
    let identity = |points: Array2<f64>| Prepared {
        points,
        rows: (0..n).collect(),
        extend: (0..n).collect(),
        embedding: None,
        mmc: None,
    };
    match rep {
        Representation::Euclidean => Ok(identity(ds.x().clone())),
        Representation::Mmc => {
            let opts = cfg.mmc_options();
            let pairs = build_pairs(ds.y(), opts.max_pairs, seed::derive_seed(cell_seed, stream_id("pairs")))?;
            let metric = learn_metric(ds.x().view(), &pairs, &opts)?;
            let points = transform_points(&metric, ds.x().view())?;
            let mut out = identity(points);
            out.mmc = Some(MmcSummary {
                n_similar: pairs.similar.len(),
                n_dissimilar: pairs.dissimilar.len(),
                objective_start: metric.objective_trace[0],
                objective_end: *metric.objective_trace.last().expect("trace starts non-empty"),
                accepted_steps: metric.objective_trace.len() - 1,
                min_projection_eigenvalue: metric
                    .projection_min_eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min),
            });
            Ok(out)
        }
        Representation::Rfphate => {
            let params = best.ok_or_else(|| Error::InvalidInput("forest tuning failed; no parameters to embed with".into()))?;
            let rows = dataset::stratified_subsample(
                ds.y(),
                ds.n_classes(),
                cfg.subsample_cap,
                seed::derive_seed(cell_seed, stream_id("subsample")),
            );
            let sub = ds.select_rows(&rows);
            let clock = Instant::now();
            let forest = fit_forest_with_oob_coverage(&sub, params, seed::derive_seed(cell_seed, stream_id("forest")))?;
            let prox = gap_proximities(&forest)?;
            log::debug!("proximities for {} rows in {:.1}s", rows.len(), clock.elapsed().as_secs_f64());
            let max_row_sum_error = check_row_sums(&prox.off_diagonal_row_sums())?;
            let emb = embed_proximities(prox.matrix().view(), &cfg.embed_options())?;
            log::debug!("embedding (t = {}, m = {}) by {:.1}s", emb.t, emb.m, clock.elapsed().as_secs_f64());
            drop(prox);
            let extend = extend_by_proximity(&forest, ds, &rows)?;
            Ok(Prepared {
                embedding: Some(EmbedSummary {
                    t: emb.t,
                    m: emb.m,
                    stress: emb.stress,
                    stress_by_dim: emb.stress_by_dim.clone(),
                    entropy: emb.entropy.clone(),
                    n_embedded: rows.len(),
                    forest_params: forest.params(),
                    max_row_sum_error,
                }),
                points: emb.coords,
                rows,
                extend,
                mmc: None,
            })
        }
    }
}

fn check_row_sums(sums: &[f64]) -> Result<f64> {
    match sums.iter().position(|s| (s - 1.0).abs() > 1e-8) {
        Some(i) => Err(Error::Numerical(format!("proximity row {i} sums to {}", sums[i]))),
        None => Ok(sums.iter().fold(0.0, |m, s| m.max((s - 1.0).abs()))),
    }
}

/// Map each dataset row to an embedded row: itself if embedded, otherwise
/// the embedded row with the highest forest proximity (lowest index on ties).
fn extend_by_proximity(forest: &Forest, ds: &Dataset, rows: &[usize]) -> Result<Vec<usize>> {
    let n = ds.n();
    let mut extend = vec![usize::MAX; n];
    for (pos, &r) in rows.iter().enumerate() {
        extend[r] = pos;
    }
    let held: Vec<usize> = (0..n).filter(|&i| extend[i] == usize::MAX).collect();
    if held.is_empty() {
        return Ok(extend);
    }
    let queries = ds.x().select(Axis(0), &held);
    let prox = gap_proximities_to(forest, queries.view())?;
    for (q, &i) in held.iter().enumerate() {
        let row = prox.matrix().row(q);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        extend[i] = best;
    }
    Ok(extend)
}

/// First two principal coordinates (classical scaling of Euclidean
/// distances); embeddings already are principal-like and are used as is.
fn scatter_coords(points: ArrayView2<'_, f64>, is_embedding: bool) -> Result<Array2<f64>> {
    let (n, p) = points.dim();
    let take = p.min(2);
    let mut out = Array2::zeros((n, 2));
    if is_embedding || p <= 1 {
        out.slice_mut(ndarray::s![.., ..take]).assign(&points.slice(ndarray::s![.., ..take]));
        return Ok(out);
    }
    let mean = points.mean_axis(Axis(0)).expect("non-empty");
    let centered = &points - &mean;
    let cov = crate::linalg::matmul(centered.t(), centered.view());
    let (_, vecs) = sym_eigen(cov.view())?;
    for c in 0..2 {
        let mut v = vecs.column(p - 1 - c).to_owned();
        let proj = centered.dot(&v);
        if proj.iter().map(|x| x * x * x).sum::<f64>() < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        out.column_mut(c).assign(&centered.dot(&v));
    }
    Ok(out)
}

fn run_cell(
    cfg: &ExperimentConfig,
    raw: &Dataset,
    rep: Representation,
    cell_seed: u64,
    best: Option<ForestParams>,
) -> Result<CellReport> {
    let prep_opts = preprocessing_for(rep);
    let ds = dataset::preprocess(raw, prep_opts);
    let clock = Instant::now();
    let prepared = prepare(cfg, &ds, rep, cell_seed, best)?;
    log::debug!("{rep}: representation built in {:.1}s", clock.elapsed().as_secs_f64());
    let points = prepared.points.view();
    let n_points = points.nrows();
    let y = ds.y();
    let n_classes = ds.n_classes();
    let km = cfg.kmeans_options();
    let sweep_seed = seed::derive_seed(cell_seed, stream_id("sweep"));
    let k_hi = cfg.k_max.min(n_points.saturating_sub(1));
    if cfg.k_min > k_hi {
        return Err(Error::InvalidInput(format!("no K in {}..={} fits {n_points} points", cfg.k_min, cfg.k_max)));
    }
    let ks: Vec<usize> = (cfg.k_min..=k_hi).collect();
    let distances = pairwise_distances(points);
    let refs = reference_samples(points, cfg.gap_references, seed::derive_seed(cell_seed, stream_id("gap_refs")))?;
    let floor = dispersion_floor(points);
    let gap_km = cfg.gap_kmeans_options();
    let gap_seed = seed::derive_seed(cell_seed, stream_id("gap"));

    let extend = |assign: &[usize]| -> Vec<usize> { prepared.extend.iter().map(|&e| assign[e]).collect() };
    let score_k = |k: usize, result: &ClusteringResult| -> Result<BTreeMap<Metric, f64>> {
        let a = &result.assignments;
        let mut values = BTreeMap::new();
        values.insert(Metric::Inertia, Metric::Inertia.check(result.inertia)?);
        values.insert(Metric::Silhouette, Metric::Silhouette.check(silhouette_from_distances(distances.view(), a)?)?);
        values.insert(Metric::CalinskiHarabasz, Metric::CalinskiHarabasz.check(calinski_harabasz(points, a)?)?);
        values.insert(Metric::DaviesBouldin, Metric::DaviesBouldin.check(davies_bouldin(points, a)?)?);
        let reference: Vec<f64> = refs
            .iter()
            .enumerate()
            .map(|(b, xr)| kmeans(xr.view(), k, &gap_km, seed::derive_path(gap_seed, &[k as u64, b as u64])).map(|r| r.inertia))
            .collect::<Result<_>>()?;
        let gap = gap_from_dispersions(result.inertia, &reference, floor);
        values.insert(Metric::GapStatistic, Metric::GapStatistic.check(gap.gap)?);
        values.extend(external_scores(y, &extend(a))?);
        Ok(values)
    };

    let runs: Vec<Result<(ClusteringResult, BTreeMap<Metric, f64>)>> = ks
        .par_iter()
        .map(|&k| {
            let r = kmeans(points, k, &km, seed::derive_seed(sweep_seed, k as u64))?;
            let v = score_k(k, &r)?;
            Ok((r, v))
        })
        .collect();
    let mut scores = ScoreTable::new(ks.clone());
    let mut assignments = Vec::new();
    for (k, run) in ks.iter().zip(runs) {
        let (r, values) = run?;
        for (m, v) in values {
            scores.set(m, *k, v)?;
        }
        if cfg.export_assignments {
            assignments.push((*k, extend(&r.assignments)));
        }
    }

    log::debug!("{rep}: K sweep scored by {:.1}s", clock.elapsed().as_secs_f64());
    let mut k_c = BTreeMap::new();
    let mut k_c_raw = BTreeMap::new();
    let mut k_c_abs_diff = BTreeMap::new();
    let mut values_at_k_c = BTreeMap::new();
    for m in Metric::ALL {
        let k = optimal_k(&scores, m)?;
        k_c.insert(m, k);
        k_c_raw.insert(m, raw_optimal_k(&scores, m)?);
        k_c_abs_diff.insert(m, k.abs_diff(n_classes));
        values_at_k_c.insert(m, scores.get(m, k).expect("selected K was scored"));
    }

    // Table-style evaluation at K = number of classes, seeded exactly as
    // the sweep would seed that K.
    let at_classes = if n_classes <= n_points && n_classes >= 2 {
        let r = kmeans(points, n_classes, &km, seed::derive_seed(sweep_seed, n_classes as u64))?;
        Some(score_k(n_classes, &r)?)
    } else {
        None
    };
    let values_at_class_count = at_classes.unwrap_or_default();
    let accuracy_at_class_count = values_at_class_count.get(&Metric::ClusteringAccuracy).copied();

    let scatter = scatter_coords(points, rep == Representation::Rfphate)?;
    let embedding_coords = prepared.embedding.is_some().then(|| prepared.points.clone());
    Ok(CellReport {
        representation: rep,
        error: None,
        preprocessing: prep_opts,
        seed: cell_seed,
        n_points,
        scores,
        k_c,
        k_c_raw,
        k_c_abs_diff,
        accuracy_at_class_count,
        values_at_class_count,
        values_at_k_c,
        embedding: prepared.embedding,
        mmc: prepared.mmc,
        embedding_coords,
        seconds: 0.0,
        scatter: Some((prepared.rows, scatter)),
        assignments,
    })
}

fn correlate(
    datasets: &[DatasetReport],
    reps: &[Representation],
    value: impl Fn(&CellReport, Metric) -> Option<f64>,
) -> Vec<CorrelationEntry> {
    let mut out = Vec::new();
    for &rep in reps {
        for m in Metric::ALL {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut skipped = Vec::new();
            for d in datasets {
                let (Some(rf), Some(cell)) = (d.rf.as_ref(), d.cell(rep)) else { continue };
                match value(cell, m) {
                    Some(v) if v.is_finite() => {
                        xs.push(rf.test_weighted_f1);
                        ys.push(v);
                    }
                    Some(_) => skipped.push(d.name.clone()),
                    None => {}
                }
            }
            let (r, note) = match metrics::pearson(&xs, &ys) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let note = match (note, skipped.is_empty()) {
                (n, true) => n,
                (n, false) => Some(format!(
                    "{}non-finite values skipped for {}",
                    n.map(|s| format!("{s}; ")).unwrap_or_default(),
                    skipped.join(", ")
                )),
            };
            out.push(CorrelationEntry {
                metric: m,
                representation: rep,
                r,
                std: (!ys.is_empty()).then(|| metrics::std_dev(&ys)),
                n_datasets: ys.len(),
                note,
            });
        }
    }
    out
}

/// Single clustering of one dataset in one representation, for the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleClustering {
    pub representation: Representation,
    pub k: usize,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub external: BTreeMap<Metric, f64>,
}

/// Build one representation with defaults from `cfg` and cluster all rows
/// at a single K. `forest` overrides forest tuning for the embedding.
pub fn cluster_dataset(
    cfg: &ExperimentConfig,
    raw: &Dataset,
    rep: Representation,
    k: usize,
    forest_params: Option<ForestParams>,
) -> Result<SingleClustering> {
    let ds_seed = seed::derive_seed(cfg.seed, stream_id("cluster"));
    let cell_seed = seed::derive_seed(ds_seed, stream_id(rep.name()));
    let ds = dataset::preprocess(raw, preprocessing_for(rep));
    let best = match (rep, forest_params) {
        (Representation::Rfphate, None) => Some(forest_scores(cfg, &ds, ds_seed)?.best),
        (_, p) => p,
    };
    let prepared = prepare(cfg, &ds, rep, cell_seed, best)?;
    let r = kmeans(prepared.points.view(), k, &cfg.kmeans_options(), seed::derive_seed(cell_seed, k as u64))?;
    let assignments: Vec<usize> = prepared.extend.iter().map(|&e| r.assignments[e]).collect();
    let external = external_scores(ds.y(), &assignments)?;
    Ok(SingleClustering {
        representation: rep,
        k,
        assignments,
        inertia: r.inertia,
        external,
    })
}

/// Embed a whole dataset (subsampled above the cap) with a forest fitted
/// using `params`, or tuned params when `None`.
pub fn embed_dataset(
    cfg: &ExperimentConfig,
    raw: &Dataset,
    params: Option<ForestParams>,
) -> Result<(Vec<usize>, Embedding, Forest)> {
    let ds_seed = seed::derive_seed(cfg.seed, stream_id("embed"));
    let ds = dataset::preprocess(raw, preprocessing_for(Representation::Rfphate));
    let params = match params {
        Some(p) => p,
        None => forest_scores(cfg, &ds, ds_seed)?.best,
    };
    let rows = dataset::stratified_subsample(ds.y(), ds.n_classes(), cfg.subsample_cap, seed::derive_seed(ds_seed, stream_id("subsample")));
    let sub = ds.select_rows(&rows);
    let forest = fit_forest_with_oob_coverage(&sub, params, seed::derive_seed(ds_seed, stream_id("forest")))?;
    let prox = gap_proximities(&forest)?;
    let emb = embed_proximities(prox.matrix().view(), &cfg.embed_options())?;
    Ok((rows, emb, forest))
}

/// Every metric for a fixed partition of a dataset.
pub fn evaluate_partition(ds: &Dataset, assign: &[usize], scale: bool) -> Result<BTreeMap<Metric, f64>> {
    let prepared = dataset::preprocess(
        ds,
        PreprocessOptions {
            scale_numeric: scale,
            one_hot: true,
            impute_zero: true,
        },
    );
    let x = prepared.x().view();
    let k = assign.iter().max().map_or(0, |&m| m + 1);
    let mut out = external_scores(ds.y(), assign)?;
    let centroids = {
        let mut c = Array2::<f64>::zeros((k, x.ncols()));
        let mut sizes = vec![0usize; k];
        for (row, &a) in x.rows().into_iter().zip(assign) {
            let mut t = c.row_mut(a);
            t += &row;
            sizes[a] += 1;
        }
        for (mut row, &s) in c.rows_mut().into_iter().zip(&sizes) {
            if s > 0 {
                row /= s as f64;
            }
        }
        c
    };
    out.insert(Metric::Inertia, crate::kmeans::inertia(x, centroids.view(), assign));
    out.insert(Metric::Silhouette, metrics::silhouette(x, assign)?);
    out.insert(Metric::CalinskiHarabasz, calinski_harabasz(x, assign)?);
    out.insert(Metric::DaviesBouldin, davies_bouldin(x, assign)?);
    Ok(out)
}

/// Run and write all artifacts into `out`.
pub fn run_and_export(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let report = run_experiment(cfg)?;
    export_report(&report, out)?;
    Ok(report)
}
