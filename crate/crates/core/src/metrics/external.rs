//! Label-based scores comparing a clustering to ground-truth classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class-by-cluster count matrix over the labels that actually occur.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    row_sums: Vec<u64>,
    col_sums: Vec<u64>,
    n: u64,
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let ids = labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("label present"))
        .collect();
    (ids, distinct.len())
}

pub fn contingency(y: &[usize], assign: &[usize]) -> Result<ContingencyTable> {
    if y.len() != assign.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: assign.len(),
        });
    }
    let (rows, r) = compact(y);
    let (cols, c) = compact(assign);
    let mut counts = vec![vec![0u64; c]; r];
    for (&a, &b) in rows.iter().zip(&cols) {
        counts[a][b] += 1;
    }
    let row_sums = counts.iter().map(|row| row.iter().sum()).collect();
    let col_sums = (0..c).map(|j| counts.iter().map(|row| row[j]).sum()).collect();
    Ok(ContingencyTable {
        counts,
        row_sums,
        col_sums,
        n: y.len() as u64,
    })
}

impl ContingencyTable {
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Class sizes.
    pub fn row_sums(&self) -> &[u64] {
        &self.row_sums
    }

    /// Cluster sizes.
    pub fn col_sums(&self) -> &[u64] {
        &self.col_sums
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, &v)| (i, j, v)))
            .filter(|&(_, _, v)| v > 0)
    }

    /// Pair confusion counts: (same class and same cluster, same cluster
    /// only, same class only, neither).
    pub fn pair_counts(&self) -> PairCounts {
        let c2 = |v: u64| v * v.saturating_sub(1) / 2;
        let both: u64 = self.cells().map(|(_, _, v)| c2(v)).sum();
        let same_class: u64 = self.row_sums.iter().map(|&v| c2(v)).sum();
        let same_cluster: u64 = self.col_sums.iter().map(|&v| c2(v)).sum();
        let total = c2(self.n);
        PairCounts {
            together_both: both,
            cluster_only: same_cluster - both,
            class_only: same_class - both,
            apart_both: total + both - same_class - same_cluster,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub together_both: u64,
    pub cluster_only: u64,
    pub class_only: u64,
    pub apart_both: u64,
}

impl PairCounts {
    pub fn total(&self) -> u64 {
        self.together_both + self.cluster_only + self.class_only + self.apart_both
    }
}

fn entropy(sizes: &[u64], n: u64) -> f64 {
    let n = n as f64;
    -sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn mutual_information(ct: &ContingencyTable) -> f64 {
    let n = ct.n as f64;
    let mi: f64 = ct
        .cells()
        .map(|(i, j, v)| {
            let v = v as f64;
            v / n * (v * n / (ct.row_sums[i] as f64 * ct.col_sums[j] as f64)).ln()
        })
        .sum();
    mi.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hcv {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_measure: f64,
}

pub fn homogeneity_completeness_v(ct: &ContingencyTable) -> Hcv {
    let h_class = entropy(&ct.row_sums, ct.n);
    let h_cluster = entropy(&ct.col_sums, ct.n);
    let mi = mutual_information(ct);
    let homogeneity = if h_class > 0.0 { (mi / h_class).min(1.0) } else { 1.0 };
    let completeness = if h_cluster > 0.0 { (mi / h_cluster).min(1.0) } else { 1.0 };
    let v_measure = if homogeneity + completeness > 0.0 {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    } else {
        0.0
    };
    Hcv {
        homogeneity,
        completeness,
        v_measure,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub rand: f64,
    pub adjusted_rand: f64,
    pub fowlkes_mallows: f64,
}

/// Rand, adjusted Rand and Fowlkes-Mallows from exact pair counts. The
/// adjusted index is reduced to one integer ratio before dividing.
pub fn rand_ari_fm(ct: &ContingencyTable) -> PairScores {
    let pc = ct.pair_counts();
    let total = pc.total();
    let rand = if total == 0 {
        1.0
    } else {
        (pc.together_both + pc.apart_both) as f64 / total as f64
    };
    let (tp, fp, fn_, tn) = (
        pc.together_both as i128,
        pc.cluster_only as i128,
        pc.class_only as i128,
        pc.apart_both as i128,
    );
    let num = 2 * (tp * tn - fn_ * fp);
    let den = (tp + fn_) * (fn_ + tn) + (tp + fp) * (fp + tn);
    let adjusted_rand = if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let fowlkes_mallows = if tp + fp == 0 || tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / ((tp + fp) as f64 * (tp + fn_) as f64).sqrt()
    };
    PairScores {
        rand,
        adjusted_rand,
        fowlkes_mallows,
    }
}

/// Expected mutual information between random partitions with the same
/// marginals (hypergeometric model).
pub fn expected_mutual_information(ct: &ContingencyTable) -> f64 {
    let n = ct.n as usize;
    let mut lf = vec![0.0f64; n + 2];
    for k in 1..lf.len() {
        lf[k] = lf[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &ct.row_sums {
        let a = a as usize;
        for &b in &ct.col_sums {
            let b = b as usize;
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = lf[a] + lf[b] + lf[n - a] + lf[n - b] - lf[n];
            for nij in lo..=hi {
                let v = nij as f64;
                let log_p = fixed - lf[nij] - lf[a - nij] - lf[b - nij] - lf[n + nij - a - b];
                emi += v / nf * (nf * v / (a as f64 * b as f64)).ln() * log_p.exp();
            }
        }
    }
    emi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoScores {
    pub mutual_information: f64,
    pub nmi: f64,
    pub ami: f64,
}

/// NMI and AMI, both normalized by the arithmetic mean of the two
/// entropies.
pub fn nmi_ami(ct: &ContingencyTable) -> InfoScores {
    let r = ct.row_sums.len();
    let c = ct.col_sums.len();
    let mi = mutual_information(ct);
    if (r == 1 && c == 1) || (r == 0 && c == 0) {
        return InfoScores {
            mutual_information: mi,
            nmi: 1.0,
            ami: 1.0,
        };
    }
    let mean_h = 0.5 * (entropy(&ct.row_sums, ct.n) + entropy(&ct.col_sums, ct.n));
    let nmi = if mi == 0.0 { 0.0 } else { (mi / mean_h.max(f64::EPSILON)).min(1.0) };
    let emi = expected_mutual_information(ct);
    let mut den = mean_h - emi;
    den = if den < 0.0 { den.min(-f64::EPSILON) } else { den.max(f64::EPSILON) };
    let ami = (mi - emi) / den;
    InfoScores {
        mutual_information: mi,
        nmi,
        ami,
    }
}

/// Fraction of point pairs on whose same/different status the two labelings
/// agree, counted pair by pair.
pub fn clustering_accuracy(y: &[usize], assign: &[usize]) -> Result<f64> {
    if y.len() != assign.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: assign.len(),
        });
    }
    let m = y.len();
    if m < 2 {
        return Err(Error::InvalidInput("clustering accuracy needs at least two points".into()));
    }
    let mut agree: u64 = 0;
    for i in 1..m {
        for j in 0..i {
            if (y[i] == y[j]) == (assign[i] == assign[j]) {
                agree += 1;
            }
        }
    }
    let pairs = (m as u64) * (m as u64 - 1) / 2;
    Ok(agree as f64 / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub weighted_f1: f64,
}

/// Accuracy and support-weighted F1 over the classes present in `y_true`.
pub fn classification_scores(y_true: &[usize], y_pred: &[usize]) -> Result<ClassificationScores> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    let k = y_true.iter().chain(y_pred).max().copied().unwrap_or(0) + 1;
    let mut tp = vec![0u64; k];
    let mut pred = vec![0u64; k];
    let mut support = vec![0u64; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        support[t] += 1;
        pred[p] += 1;
        if t == p {
            tp[t] += 1;
        }
    }
    let n = y_true.len() as f64;
    let correct: u64 = tp.iter().sum();
    let mut weighted_f1 = 0.0;
    for c in 0..k {
        let den = support[c] + pred[c];
        if support[c] == 0 || den == 0 {
            continue;
        }
        let f1 = 2.0 * tp[c] as f64 / den as f64;
        weighted_f1 += support[c] as f64 / n * f1;
    }
    Ok(ClassificationScores {
        accuracy: correct as f64 / n,
        weighted_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ct(y: &[usize], a: &[usize]) -> ContingencyTable {
        contingency(y, a).unwrap()
    }

    #[test]
    fn table_shapes() {
        let t = ct(&[0, 0, 1, 1], &[0, 0, 1, 1]);
        assert_eq!(t.counts(), &[vec![2, 0], vec![0, 2]]);
        let t = ct(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert_eq!(t.counts(), &[vec![1, 1], vec![1, 1]]);
        assert_eq!(t.row_sums().iter().sum::<u64>(), 4);
        assert_eq!(t.col_sums().iter().sum::<u64>(), 4);
        assert!(contingency(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn independent_table() {
        let t = ct(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        let h = homogeneity_completeness_v(&t);
        assert_eq!((h.homogeneity, h.completeness, h.v_measure), (0.0, 0.0, 0.0));
        let p = rand_ari_fm(&t);
        assert_eq!(p.rand, 1.0 / 3.0);
        assert_eq!(p.adjusted_rand, -0.5);
        assert_eq!(p.fowlkes_mallows, 0.0);
        let info = nmi_ami(&t);
        assert_eq!(info.nmi, 0.0);
        assert!(info.ami <= 0.0);
        assert_eq!(clustering_accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn identical_partitions() {
        let y = [0, 0, 1, 1, 2, 2, 2];
        let a = [5, 5, 3, 3, 1, 1, 1];
        let t = ct(&y, &a);
        let h = homogeneity_completeness_v(&t);
        assert_eq!((h.homogeneity, h.completeness, h.v_measure), (1.0, 1.0, 1.0));
        let p = rand_ari_fm(&t);
        assert_eq!((p.rand, p.adjusted_rand, p.fowlkes_mallows), (1.0, 1.0, 1.0));
        let info = nmi_ami(&t);
        assert!((info.nmi - 1.0).abs() < 1e-12 && (info.ami - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_cluster_two_classes() {
        let h = homogeneity_completeness_v(&ct(&[0, 0, 1, 1], &[0, 0, 0, 0]));
        assert_eq!((h.homogeneity, h.completeness, h.v_measure), (0.0, 1.0, 0.0));
    }

    #[test]
    fn classification_examples() {
        let s = classification_scores(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert_eq!(s.accuracy, 0.5);
        assert!((s.weighted_f1 - 1.0 / 3.0).abs() < 1e-15);
        let s = classification_scores(&[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!((s.accuracy, s.weighted_f1), (1.0, 1.0));
    }

    // Reference values from scikit-learn 1.x on
    // y = [0,0,0,1,1,1,2,2,2,2], a = [0,0,1,1,1,2,2,2,0,2].
    #[test]
    fn frozen_reference_values() {
        let y = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2];
        let a = [0, 0, 1, 1, 1, 2, 2, 2, 0, 2];
        let t = ct(&y, &a);
        let h = homogeneity_completeness_v(&t);
        let p = rand_ari_fm(&t);
        let info = nmi_ami(&t);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(h.homogeneity, REF[0]), "{}", h.homogeneity);
        assert!(close(h.completeness, REF[1]), "{}", h.completeness);
        assert!(close(h.v_measure, REF[2]), "{}", h.v_measure);
        assert!(close(p.adjusted_rand, REF[3]), "{}", p.adjusted_rand);
        assert!(close(p.fowlkes_mallows, REF[4]), "{}", p.fowlkes_mallows);
        assert!(close(info.nmi, REF[5]), "{}", info.nmi);
        assert!(close(info.ami, REF[6]), "{}", info.ami);
        assert!(close(p.rand, REF[7]), "{}", p.rand);
    }

    const REF: [f64; 8] = [
        0.44270128334605,
        0.44270128334605,
        0.44270128334605,
        0.20454545454545456,
        0.41666666666666663,
        0.44270128334605,
        0.23728877770133558,
        0.6888888888888889,
    ];
}
