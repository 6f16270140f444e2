//! Supervised Mahalanobis metric learning.
//!
//! Learns a positive semi-definite `M` that makes same-class pairs close
//! while keeping the summed squared distance over cross-class pairs at one.
//! The solver is projected gradient descent on column-scaled inputs: a
//! gradient step on the constraint-normalized objective, eigenvalue
//! clipping onto the PSD cone, then rescaling onto the constraint.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul, spectral_map, sym_eigen, sym_eigenvalues};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSets {
    /// Same-class pairs `(i, j)` with `i < j`.
    pub similar: Vec<(usize, usize)>,
    /// Cross-class pairs `(i, j)` with `i < j`.
    pub dissimilar: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Decode the q-th pair of `0..m` in the order (0,1), (0,2), (1,2), (0,3), ...
fn triangular_pair(q: u64) -> (u64, u64) {
    let mut j = ((1.0 + (1.0 + 8.0 * q as f64).sqrt()) / 2.0).floor() as u64;
    while j * (j - 1) / 2 > q {
        j -= 1;
    }
    while (j + 1) * j / 2 <= q {
        j += 1;
    }
    (q - j * (j - 1) / 2, j)
}

/// Enumerate same-class and cross-class pairs, sampling uniformly without
/// replacement when a set would exceed `cap`. Pairs come out sorted.
pub fn build_pairs(y: &[usize], cap: usize, seed: u64) -> Result<PairSets> {
    let n_classes = y.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        members[c].push(i);
    }
    members.retain(|m| !m.is_empty());

    // Blocks of the pair index space: one per class (similar) and one per
    // class pair (dissimilar).
    let within: Vec<u64> = members.iter().map(|m| (m.len() as u64) * (m.len() as u64).saturating_sub(1) / 2).collect();
    let mut across: Vec<(usize, usize, u64)> = Vec::new();
    for a in 0..members.len() {
        for b in a + 1..members.len() {
            across.push((a, b, (members[a].len() * members[b].len()) as u64));
        }
    }
    let total_s: u64 = within.iter().sum();
    let total_d: u64 = across.iter().map(|t| t.2).sum();
    if total_s == 0 {
        return Err(Error::InvalidInput("no same-class pairs; every class is a singleton".into()));
    }
    if total_d == 0 {
        return Err(Error::InvalidInput("no cross-class pairs; labels have a single class".into()));
    }

    let choose = |total: u64, stream: u64| -> Vec<u64> {
        if total <= cap as u64 {
            (0..total).collect()
        } else {
            let mut rng = seed::rng(seed::derive_seed(seed, stream));
            let mut idx: Vec<u64> = sample(&mut rng, total as usize, cap).into_iter().map(|v| v as u64).collect();
            idx.sort_unstable();
            idx
        }
    };
    let order = |(i, j): (usize, usize)| if i < j { (i, j) } else { (j, i) };

    let mut similar = Vec::new();
    for mut q in choose(total_s, 0) {
        let mut c = 0;
        while q >= within[c] {
            q -= within[c];
            c += 1;
        }
        let (a, b) = triangular_pair(q);
        similar.push(order((members[c][a as usize], members[c][b as usize])));
    }
    let mut dissimilar = Vec::new();
    for mut q in choose(total_d, 1) {
        let mut t = 0;
        while q >= across[t].2 {
            q -= across[t].2;
            t += 1;
        }
        let (a, b, _) = across[t];
        let nb = members[b].len() as u64;
        dissimilar.push(order((members[a][(q / nb) as usize], members[b][(q % nb) as usize])));
    }
    similar.sort_unstable();
    dissimilar.sort_unstable();
    Ok(PairSets {
        similar,
        dissimilar,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmcOptions {
    pub max_pairs: usize,
    pub max_iter: usize,
    /// Initial step length relative to the norm of the current iterate.
    pub step: f64,
    /// Relative objective change that ends the iteration.
    pub tol: f64,
}

impl Default for MmcOptions {
    fn default() -> Self {
        MmcOptions {
            max_pairs: 5000,
            max_iter: 500,
            step: 0.1,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub m: Array2<f64>,
    /// Smallest eigenvalue of the returned matrix.
    pub eigen_floor: f64,
    /// Similar-pair objective of each accepted iterate, starting from the
    /// rescaled identity.
    pub objective_trace: Vec<f64>,
    /// Smallest eigenvalue after every PSD projection, accepted or not.
    pub projection_min_eigenvalues: Vec<f64>,
}

impl MetricMatrix {
    /// Wrap an explicit matrix; it must be symmetric and PSD within 1e-8.
    pub fn from_matrix(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let p = m.nrows();
        for i in 0..p {
            for j in 0..i {
                if (m[[i, j]] - m[[j, i]]).abs() > 1e-10 {
                    return Err(Error::InvalidInput("metric matrix is not symmetric".into()));
                }
            }
        }
        let floor = sym_eigenvalues(m.view())?.first().copied().unwrap_or(0.0);
        if floor < -1e-8 {
            return Err(Error::NotPsd(format!("smallest eigenvalue {floor}")));
        }
        Ok(MetricMatrix {
            m,
            eigen_floor: floor,
            objective_trace: Vec::new(),
            projection_min_eigenvalues: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// Symmetric PSD square root, negative eigenvalues clipped to zero.
    pub fn sqrt(&self) -> Result<Array2<f64>> {
        let (values, vectors) = sym_eigen(self.m.view())?;
        Ok(spectral_map(&values, &vectors, |l| l.max(0.0).sqrt()))
    }
}

struct Problem {
    /// Row k is the difference vector of similar pair k.
    similar: Array2<f64>,
    /// Sum of outer products of the dissimilar differences.
    dissimilar_scatter: Array2<f64>,
}

impl Problem {
    fn new(x: ArrayView2<'_, f64>, pairs: &PairSets) -> Self {
        let diffs = |list: &[(usize, usize)]| {
            let mut d = Array2::zeros((list.len(), x.ncols()));
            for (k, &(i, j)) in list.iter().enumerate() {
                d.row_mut(k).assign(&(&x.row(i) - &x.row(j)));
            }
            d
        };
        let dis = diffs(&pairs.dissimilar);
        Problem {
            similar: diffs(&pairs.similar),
            dissimilar_scatter: matmul(dis.t(), dis.view()),
        }
    }

    /// Sum of squared dissimilar-pair distances under `m`.
    fn constraint(&self, m: &Array2<f64>) -> f64 {
        (m * &self.dissimilar_scatter).sum()
    }

    /// Per-pair squared distances for the similar set.
    fn similar_sq(&self, m: &Array2<f64>) -> Array1<f64> {
        let dm = matmul(self.similar.view(), m.view());
        (&dm * &self.similar).sum_axis(Axis(1))
    }

    fn objective(&self, m: &Array2<f64>) -> f64 {
        self.similar_sq(m).iter().map(|&v| v.max(0.0).sqrt()).sum()
    }

    /// Gradient of `f(M) / sqrt(g(M))`, the similar-pair objective after
    /// rescaling onto the constraint. Both are homogeneous in `M`, so a plain
    /// gradient step on `f` can shrink `g` faster than `f` and lose ground
    /// once renormalized.
    fn gradient(&self, m: &Array2<f64>) -> Array2<f64> {
        let sq = self.similar_sq(m);
        let mut weighted = self.similar.clone();
        for (mut row, &v) in weighted.rows_mut().into_iter().zip(&sq) {
            row *= 0.5 / v.max(0.0).sqrt().max(1e-12);
        }
        let grad_f = matmul(weighted.t(), self.similar.view());
        let f = self.objective(m);
        let g = self.constraint(m);
        (grad_f - &self.dissimilar_scatter * (0.5 * f / g)) / g.sqrt()
    }
}

/// Clip negative eigenvalues to zero. Returns the projected matrix and its
/// smallest eigenvalue as recomputed after reconstruction.
fn project_psd(m: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let (values, vectors) = sym_eigen(m.view())?;
    let mut out = spectral_map(&values, &vectors, |l| l.max(0.0));
    crate::linalg::symmetrize_in_place(&mut out);
    let floor = sym_eigenvalues(out.view())?.first().copied().unwrap_or(0.0);
    Ok((out, floor))
}

pub fn learn_metric(x: ArrayView2<'_, f64>, pairs: &PairSets, opts: &MmcOptions) -> Result<MetricMatrix> {
    let p = x.ncols();
    if p == 0 {
        return Err(Error::InvalidInput("metric learning needs at least one feature".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric learning input contains NaN or infinity".into()));
    }
    let n = x.nrows();
    if pairs.similar.iter().chain(&pairs.dissimilar).any(|&(i, j)| i >= n || j >= n || i == j) {
        return Err(Error::InvalidInput("pair index out of range or self-pair".into()));
    }
    if pairs.similar.is_empty() || pairs.dissimilar.is_empty() {
        return Err(Error::InvalidInput("similar and dissimilar pair sets must be non-empty".into()));
    }
    // Iterate on column-scaled inputs; M = D M' D with D = diag(1 / scale)
    // maps the solution back, and the start is still the identity on `x`.
    let spread = Problem::new(x, pairs).dissimilar_scatter.diag().to_owned();
    let scale: Array1<f64> = spread.mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    let scaled_x = &x / &scale;
    let problem = Problem::new(scaled_x.view(), pairs);

    let start = Array2::from_diag(&scale.mapv(|v| v * v));
    let g0 = problem.constraint(&start);
    if g0 <= 0.0 {
        return Err(Error::InvalidInput("dissimilar pairs have zero spread".into()));
    }
    let mut m = start / g0;
    let mut f = problem.objective(&m);
    let mut trace = vec![f];
    let mut min_eigs = Vec::new();
    let mut step = opts.step;

    for _ in 0..opts.max_iter {
        let grad = problem.gradient(&m);
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm == 0.0 {
            break;
        }
        let mnorm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let candidate = &m - &(grad * (step * mnorm / gnorm));
        let (projected, floor) = project_psd(&candidate)?;
        min_eigs.push(floor);
        if floor < -1e-8 {
            return Err(Error::NotPsd(format!("projection left eigenvalue {floor}")));
        }
        let g = problem.constraint(&projected);
        let accepted = if g > 0.0 {
            let scaled = projected / g;
            let f_new = problem.objective(&scaled);
            (f_new < f).then_some((scaled, f_new))
        } else {
            None
        };
        match accepted {
            Some((next, f_new)) => {
                let rel = (f - f_new) / f.abs().max(f64::MIN_POSITIVE);
                m = next;
                f = f_new;
                trace.push(f);
                step = (step * 1.2).min(1.0);
                if rel < opts.tol {
                    break;
                }
            }
            None => {
                step *= 0.5;
                if step < 1e-10 {
                    break;
                }
            }
        }
    }
    let mut m = Array2::from_shape_fn((p, p), |(i, j)| m[[i, j]] / (scale[i] * scale[j]));
    crate::linalg::symmetrize_in_place(&mut m);
    let eigen_floor = sym_eigenvalues(m.view())?.first().copied().unwrap_or(0.0);
    Ok(MetricMatrix {
        m,
        eigen_floor,
        objective_trace: trace,
        projection_min_eigenvalues: min_eigs,
    })
}

/// Map points so Euclidean distance in the image equals the learned
/// distance in the input.
pub fn transform_points(metric: &MetricMatrix, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() != metric.dim() {
        return Err(Error::DimensionMismatch {
            expected: metric.dim(),
            got: x.ncols(),
        });
    }
    Ok(matmul(x, metric.sqrt()?.view()))
}

pub fn mahalanobis_distance(metric: &MetricMatrix, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    let p = metric.dim();
    if a.len() != p || b.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: if a.len() != p { a.len() } else { b.len() },
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
    let mut q = 0.0;
    for i in 0..p {
        let mut row = 0.0;
        for j in 0..p {
            row += metric.m[[i, j]] * d[j];
        }
        q += d[i] * row;
    }
    if q < -1e-10 {
        return Err(Error::NotPsd(format!("negative squared distance {q}")));
    }
    Ok(q.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::Rng;

    #[test]
    fn exhaustive_pairs_below_cap() {
        let p = build_pairs(&[0, 0, 1, 1], 100, 0).unwrap();
        assert_eq!(p.similar, vec![(0, 1), (2, 3)]);
        assert_eq!(p.dissimilar, vec![(0, 2), (0, 3), (1, 2), (1, 3)]);
        assert!(build_pairs(&[1, 1, 1], 10, 0).is_err());
    }

    #[test]
    fn triangular_decoding() {
        let mut q = 0;
        for j in 1..40u64 {
            for i in 0..j {
                assert_eq!(triangular_pair(q), (i, j));
                q += 1;
            }
        }
    }

    #[test]
    fn capped_sampling_is_deterministic_and_distinct() {
        let y: Vec<usize> = (0..150).map(|i| i / 50).collect();
        let a = build_pairs(&y, 2000, 4).unwrap();
        let b = build_pairs(&y, 2000, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.similar.len(), a.dissimilar.len()), (2000, 2000));
        let mut s = a.similar.clone();
        s.dedup();
        assert_eq!(s.len(), 2000);
        assert!(a.similar.iter().all(|&(i, j)| i < j && y[i] == y[j]));
        assert!(a.dissimilar.iter().all(|&(i, j)| i < j && y[i] != y[j]));
    }

    #[test]
    fn distance_examples() {
        let id = MetricMatrix::from_matrix(Array2::eye(2)).unwrap();
        let d = mahalanobis_distance(&id, array![0.0, 0.0].view(), array![3.0, 4.0].view()).unwrap();
        assert_eq!(d, 5.0);
        let m = MetricMatrix::from_matrix(array![[1.0, 0.0], [0.0, 100.0]]).unwrap();
        let d = mahalanobis_distance(&m, array![0.0, 0.0].view(), array![1.0, 1.0].view()).unwrap();
        assert!((d - 101f64.sqrt()).abs() < 1e-15);
        assert_eq!(mahalanobis_distance(&m, array![2.0, 1.0].view(), array![2.0, 1.0].view()).unwrap(), 0.0);
        assert!(MetricMatrix::from_matrix(array![[1.0, 0.0], [0.0, -1.0]]).is_err());
    }

    #[test]
    fn transform_examples() {
        let x = array![[1.0, 2.0], [3.0, -1.0]];
        let id = MetricMatrix::from_matrix(Array2::eye(2)).unwrap();
        let t = transform_points(&id, x.view()).unwrap();
        assert!(t.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
        let m = MetricMatrix::from_matrix(array![[4.0, 0.0], [0.0, 0.0]]).unwrap();
        let t = transform_points(&m, x.view()).unwrap();
        assert!((t[[0, 0]] - 2.0).abs() < 1e-12 && t[[0, 1]].abs() < 1e-12);
        assert!((t[[1, 0]] - 6.0).abs() < 1e-12 && t[[1, 1]].abs() < 1e-12);
    }

    fn two_class_fixture() -> (Array2<f64>, Vec<usize>) {
        let mut rng = seed::rng(5);
        let n = 80;
        let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| {
            if j == 0 {
                y[i] as f64 * 2.0 + 0.3 * rng.random::<f64>()
            } else {
                4.0 * rng.random::<f64>()
            }
        });
        (x, y)
    }

    fn mean_ratio(x: &Array2<f64>, y: &[usize], dist: impl Fn(usize, usize) -> f64) -> f64 {
        let (mut between, mut nb, mut within, mut nw) = (0.0, 0, 0.0, 0);
        for i in 0..x.nrows() {
            for j in 0..i {
                if y[i] == y[j] {
                    within += dist(i, j);
                    nw += 1;
                } else {
                    between += dist(i, j);
                    nb += 1;
                }
            }
        }
        (between / nb as f64) / (within / nw as f64)
    }

    #[test]
    fn learned_metric_separates_better_than_euclidean() {
        let (x, y) = two_class_fixture();
        let pairs = build_pairs(&y, 5000, 0).unwrap();
        let metric = learn_metric(x.view(), &pairs, &MmcOptions::default()).unwrap();
        assert!(metric.projection_min_eigenvalues.iter().all(|&e| e >= -1e-8));
        assert!(metric.objective_trace.windows(2).all(|w| w[1] < w[0]));
        let euclid = mean_ratio(&x, &y, |i, j| (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt());
        let learned = mean_ratio(&x, &y, |i, j| mahalanobis_distance(&metric, x.row(i), x.row(j)).unwrap());
        assert!(learned > euclid, "{learned} vs {euclid}");
        assert!(metric.m[[0, 0]] > metric.m[[1, 1]]);
    }

    #[test]
    fn transformed_distances_match_metric() {
        let mut rng = seed::rng(9);
        let a = Array2::from_shape_fn((4, 4), |_| rng.random::<f64>() - 0.5);
        let m = MetricMatrix::from_matrix(matmul(a.view(), a.t())).unwrap();
        let pts = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>());
        let t = transform_points(&m, pts.view()).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let direct = mahalanobis_distance(&m, pts.row(i), pts.row(j)).unwrap();
                let image: Array1<f64> = &t.row(i) - &t.row(j);
                assert!((image.dot(&image).sqrt() - direct).abs() < 1e-8);
            }
        }
    }
}
