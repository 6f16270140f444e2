//! Clustering and classification scores, K selection and correlation.

mod external;
mod internal;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use external::{
    classification_scores, clustering_accuracy, contingency, expected_mutual_information, homogeneity_completeness_v,
    mutual_information, nmi_ami, rand_ari_fm, ClassificationScores, ContingencyTable, Hcv, InfoScores, PairCounts,
    PairScores,
};
pub use internal::{
    calinski_harabasz, davies_bouldin, dispersion_floor, gap_from_dispersions, gap_statistic, pairwise_distances,
    reference_samples, silhouette, silhouette_from_distances, Gap,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Inertia,
    Silhouette,
    CalinskiHarabasz,
    DaviesBouldin,
    GapStatistic,
    Homogeneity,
    Completeness,
    VMeasure,
    Rand,
    AdjustedRand,
    Nmi,
    Ami,
    FowlkesMallows,
    ClusteringAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 14] = [
        Metric::Inertia,
        Metric::Silhouette,
        Metric::CalinskiHarabasz,
        Metric::DaviesBouldin,
        Metric::GapStatistic,
        Metric::Homogeneity,
        Metric::Completeness,
        Metric::VMeasure,
        Metric::Rand,
        Metric::AdjustedRand,
        Metric::Nmi,
        Metric::Ami,
        Metric::FowlkesMallows,
        Metric::ClusteringAccuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Inertia => "inertia",
            Metric::Silhouette => "silhouette",
            Metric::CalinskiHarabasz => "calinski_harabasz",
            Metric::DaviesBouldin => "davies_bouldin",
            Metric::GapStatistic => "gap_statistic",
            Metric::Homogeneity => "homogeneity",
            Metric::Completeness => "completeness",
            Metric::VMeasure => "v_measure",
            Metric::Rand => "rand",
            Metric::AdjustedRand => "adjusted_rand",
            Metric::Nmi => "nmi",
            Metric::Ami => "ami",
            Metric::FowlkesMallows => "fowlkes_mallows",
            Metric::ClusteringAccuracy => "clustering_accuracy",
        }
    }

    pub fn is_external(self) -> bool {
        !matches!(
            self,
            Metric::Inertia | Metric::Silhouette | Metric::CalinskiHarabasz | Metric::DaviesBouldin | Metric::GapStatistic
        )
    }

    pub fn lower_is_better(self) -> bool {
        matches!(self, Metric::Inertia | Metric::DaviesBouldin)
    }

    /// Closed range every value of this metric must fall in.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::Inertia | Metric::CalinskiHarabasz | Metric::DaviesBouldin => (0.0, f64::INFINITY),
            Metric::GapStatistic => (f64::NEG_INFINITY, f64::INFINITY),
            Metric::Silhouette | Metric::AdjustedRand => (-1.0, 1.0),
            Metric::Ami => (f64::NEG_INFINITY, 1.0),
            _ => (0.0, 1.0),
        }
    }

    /// Reject NaN and values outside `range()` by more than rounding.
    pub fn check(self, value: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        let tol = 1e-9;
        if value.is_nan() || value < lo - tol || value > hi + tol {
            return Err(Error::Numerical(format!("{} = {value} outside [{lo}, {hi}]", self.name())));
        }
        Ok(value)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }
}

/// Every external score of one partition against the ground truth.
pub fn external_scores(y: &[usize], assign: &[usize]) -> Result<BTreeMap<Metric, f64>> {
    let ct = contingency(y, assign)?;
    let hcv = homogeneity_completeness_v(&ct);
    let pairs = rand_ari_fm(&ct);
    let info = nmi_ami(&ct);
    let acc = clustering_accuracy(y, assign)?;
    let mut out = BTreeMap::new();
    for (m, v) in [
        (Metric::Homogeneity, hcv.homogeneity),
        (Metric::Completeness, hcv.completeness),
        (Metric::VMeasure, hcv.v_measure),
        (Metric::Rand, pairs.rand),
        (Metric::AdjustedRand, pairs.adjusted_rand),
        (Metric::Nmi, info.nmi),
        (Metric::Ami, info.ami),
        (Metric::FowlkesMallows, pairs.fowlkes_mallows),
        (Metric::ClusteringAccuracy, acc),
    ] {
        out.insert(m, m.check(v)?);
    }
    Ok(out)
}

/// Scores per metric across a K sweep. Missing entries are NaN.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub ks: Vec<usize>,
    pub values: BTreeMap<Metric, Vec<f64>>,
}

impl ScoreTable {
    pub fn new(ks: Vec<usize>) -> Self {
        ScoreTable {
            ks,
            values: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, metric: Metric, k: usize, value: f64) -> Result<()> {
        let idx = self
            .ks
            .iter()
            .position(|&x| x == k)
            .ok_or_else(|| Error::InvalidInput(format!("K={k} not in score table")))?;
        let n = self.ks.len();
        self.values.entry(metric).or_insert_with(|| vec![f64::NAN; n])[idx] = value;
        Ok(())
    }

    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        let idx = self.ks.iter().position(|&x| x == k)?;
        self.values.get(&metric).map(|v| v[idx]).filter(|v| !v.is_nan())
    }

    pub fn curve(&self, metric: Metric) -> Option<&[f64]> {
        self.values.get(&metric).map(|v| v.as_slice())
    }
}

fn best_index(values: &[f64], lower: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                if lower {
                    v < values[b]
                } else {
                    v > values[b]
                }
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// K at the literal optimum of a metric's curve (argmin for lower-is-better
/// metrics, argmax otherwise); ties go to the smallest K.
pub fn raw_optimal_k(scores: &ScoreTable, metric: Metric) -> Result<usize> {
    let curve = scores
        .curve(metric)
        .ok_or_else(|| Error::InvalidInput(format!("no scores for {metric}")))?;
    best_index(curve, metric.lower_is_better())
        .map(|i| scores.ks[i])
        .ok_or_else(|| Error::InvalidInput(format!("all {metric} scores missing")))
}

/// Selected K for a metric. Inertia always decreases with K, so its curve
/// is read at the elbow (largest second difference) instead of the argmin.
pub fn optimal_k(scores: &ScoreTable, metric: Metric) -> Result<usize> {
    if metric != Metric::Inertia {
        return raw_optimal_k(scores, metric);
    }
    let curve = scores
        .curve(metric)
        .ok_or_else(|| Error::InvalidInput("no inertia scores".into()))?;
    Ok(scores.ks[elbow_index(curve)])
}

/// Index of the largest second difference; endpoints fall back to the
/// first index when fewer than three points exist.
pub fn elbow_index(curve: &[f64]) -> usize {
    if curve.len() < 3 {
        return 0;
    }
    let mut best = 1;
    let mut best_val = f64::NEG_INFINITY;
    for i in 1..curve.len() - 1 {
        let d2 = curve[i - 1] - 2.0 * curve[i] + curve[i + 1];
        if d2 > best_val {
            best_val = d2;
            best = i;
        }
    }
    best
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidInput("correlation needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidInput("correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}
