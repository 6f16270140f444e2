//! Lloyd's K-means with k-means++ seeding and restarts.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, sq_dist};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub restarts: usize,
    /// Stop once the summed squared centroid shift falls to this value.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 10,
            tol: 1e-6,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub k: usize,
    pub n_iter: usize,
    pub seed: u64,
    /// Inertia after each centroid update of the winning restart.
    pub inertia_trace: Vec<f64>,
}

fn validate(x: ArrayView2<'_, f64>, k: usize, opts: &KMeansOptions) -> Result<()> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("K must be in [1, {n}], got {k}")));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidInput("restarts must be at least 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("K-means input contains NaN or infinity".into()));
    }
    Ok(())
}

/// Best of `opts.restarts` runs by inertia; ties go to the earliest
/// restart. Restart r uses seed `derive_seed(seed, r)`.
pub fn kmeans(x: ArrayView2<'_, f64>, k: usize, opts: &KMeansOptions, seed: u64) -> Result<ClusteringResult> {
    validate(x, k, opts)?;
    let x = x.as_standard_layout();
    let norms: Array1<f64> = x.rows().into_iter().map(|r| r.dot(&r)).collect();
    let runs: Vec<Result<ClusteringResult>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed::derive_seed(seed, r as u64));
            single_run(x.view(), &norms, k, opts, &mut rng)
        })
        .collect();
    let mut best: Option<ClusteringResult> = None;
    for run in runs {
        let run = run?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one restart");
    best.seed = seed;
    Ok(best)
}

/// One clustering per K in `k_min..=min(k_max, n-1)`, each seeded with
/// `derive_seed(seed, K)`.
pub fn sweep_k(
    x: ArrayView2<'_, f64>,
    k_min: usize,
    k_max: usize,
    opts: &KMeansOptions,
    seed: u64,
) -> Result<Vec<ClusteringResult>> {
    let upper = k_max.min(x.nrows().saturating_sub(1));
    if k_min == 0 || k_min > upper {
        return Err(Error::InvalidInput(format!(
            "empty K range {k_min}..={upper} for {} points",
            x.nrows()
        )));
    }
    (k_min..=upper)
        .into_par_iter()
        .map(|k| kmeans(x, k, opts, seed::derive_seed(seed, k as u64)))
        .collect()
}

/// Within-cluster sum of squares of `assign` around `centroids`.
pub fn inertia(x: ArrayView2<'_, f64>, centroids: ArrayView2<'_, f64>, assign: &[usize]) -> f64 {
    x.rows()
        .into_iter()
        .zip(assign)
        .map(|(r, &a)| r.iter().zip(centroids.row(a)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum()
}

fn plus_plus<R: Rng>(x: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.row_mut(0).assign(&x.row(first));
    let row = |i: usize| x.row(i).to_slice().expect("standard layout");
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| (0..n).rev().find(|&i| d2[i] > 0.0).expect("positive mass"))
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.row_mut(c).assign(&x.row(pick));
        for i in 0..n {
            let d = sq_dist(row(i), row(pick));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

/// Nearest centroid for every row (ties to the lower id) and the squared
/// distance to it.
fn nearest(x: ArrayView2<'_, f64>, norms: &Array1<f64>, centers: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
    let dots = matmul_nt(x, centers.view());
    let cnorm: Vec<f64> = centers.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut assign = Vec::with_capacity(x.nrows());
    let mut dist = Vec::with_capacity(x.nrows());
    for (i, row) in dots.rows().into_iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &dot) in row.iter().enumerate() {
            let d = norms[i] - 2.0 * dot + cnorm[j];
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        assign.push(best);
        dist.push(best_d.max(0.0));
    }
    (assign, dist)
}

/// Give every empty cluster the point farthest from its own centroid,
/// taken from clusters that can spare one.
fn repair_empty(assign: &mut [usize], dist: &mut [f64], k: usize) -> bool {
    let mut sizes = vec![0usize; k];
    assign.iter().for_each(|&a| sizes[a] += 1);
    let mut repaired = false;
    for e in 0..k {
        if sizes[e] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..assign.len() {
            if sizes[assign[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let i = far.expect("K <= n leaves a donor");
        sizes[assign[i]] -= 1;
        sizes[e] = 1;
        assign[i] = e;
        dist[i] = 0.0;
        repaired = true;
    }
    repaired
}

fn means(x: ArrayView2<'_, f64>, assign: &[usize], k: usize) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut sizes = vec![0usize; k];
    for (r, &a) in x.rows().into_iter().zip(assign) {
        let mut s = sums.row_mut(a);
        s += &r;
        sizes[a] += 1;
    }
    for (mut s, &c) in sums.axis_iter_mut(Axis(0)).zip(&sizes) {
        s /= c as f64;
    }
    sums
}

fn single_run<R: Rng>(
    x: ArrayView2<'_, f64>,
    norms: &Array1<f64>,
    k: usize,
    opts: &KMeansOptions,
    rng: &mut R,
) -> Result<ClusteringResult> {
    let mut centers = plus_plus(x, k, rng);
    let mut assign: Vec<usize> = Vec::new();
    let mut trace: Vec<f64> = Vec::new();
    let mut n_iter = 0;
    for _ in 0..opts.max_iter {
        let (mut next, mut dist) = nearest(x, norms, &centers);
        repair_empty(&mut next, &mut dist, k);
        if next == assign {
            break;
        }
        assign = next;
        let updated = means(x, &assign, k);
        let shift: f64 = (&updated - &centers).iter().map(|v| v * v).sum();
        centers = updated;
        let value = inertia(x, centers.view(), &assign);
        if let Some(&prev) = trace.last() {
            if value > prev + 1e-9 * prev.abs() + 1e-12 {
                return Err(Error::Numerical(format!(
                    "Lloyd inertia increased from {prev} to {value}"
                )));
            }
        }
        trace.push(value);
        n_iter += 1;
        if shift <= opts.tol {
            break;
        }
    }
    // Settle on nearest-centroid assignments for the final centroids.
    for _ in 0..opts.max_iter.max(1) {
        let (mut next, mut dist) = nearest(x, norms, &centers);
        if !repair_empty(&mut next, &mut dist, k) {
            assign = next;
            break;
        }
        assign = next;
        centers = means(x, &assign, k);
    }
    let value = inertia(x, centers.view(), &assign);
    Ok(ClusteringResult {
        assignments: assign,
        centroids: centers,
        inertia: value,
        k,
        n_iter,
        seed: 0,
        inertia_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_pairs_on_a_line() {
        let x = array![[0.0], [1.0], [10.0], [11.0]];
        let r = kmeans(x.view(), 2, &KMeansOptions::default(), 0).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        assert!((r.inertia - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_cluster_and_n_clusters() {
        let x = array![[0.0, 1.0], [2.0, 5.0], [4.0, 0.0], [1.0, 1.0], [3.0, 3.0]];
        let r = kmeans(x.view(), 1, &KMeansOptions::default(), 3).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        assert!(r.centroids.row(0).iter().zip(&mean).all(|(a, b)| (a - b).abs() < 1e-12));
        let total_var: f64 = x.var_axis(Axis(0), 0.0).sum() * 5.0;
        assert!((r.inertia - total_var).abs() < 1e-9);
        let r = kmeans(x.view(), 5, &KMeansOptions::default(), 3).unwrap();
        assert!(r.inertia.abs() < 1e-12);
        assert!(kmeans(x.view(), 6, &KMeansOptions::default(), 3).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let x = array![[0.0], [0.0], [0.0], [1.0]];
        let r = kmeans(x.view(), 3, &KMeansOptions::default(), 1).unwrap();
        let mut seen = [false; 3];
        r.assignments.iter().for_each(|&a| seen[a] = true);
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn sweep_caps_at_n_minus_one() {
        let x = Array2::from_shape_fn((8, 2), |(i, j)| (i * 3 + j) as f64);
        let runs = sweep_k(x.view(), 3, 100, &KMeansOptions { restarts: 2, ..Default::default() }, 0).unwrap();
        assert_eq!(runs.iter().map(|r| r.k).collect::<Vec<_>>(), (3..=7).collect::<Vec<_>>());
    }

    #[test]
    fn repair_moves_farthest_point() {
        let mut assign = vec![0, 0, 0, 1];
        let mut dist = vec![0.1, 0.5, 0.2, 0.0];
        assert!(repair_empty(&mut assign, &mut dist, 3));
        assert_eq!(assign, vec![0, 2, 0, 1]);
    }
}
