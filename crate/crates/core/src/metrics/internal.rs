//! Scores computed from the points and the partition alone.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansOptions};
use crate::linalg::sq_dist;
use crate::seed;

fn check_labels(n: usize, assign: &[usize]) -> Result<usize> {
    if assign.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: assign.len(),
        });
    }
    Ok(assign.iter().max().map_or(0, |&m| m + 1))
}

fn cluster_sizes(assign: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    assign.iter().for_each(|&a| sizes[a] += 1);
    sizes
}

/// Dense Euclidean distance matrix between the rows of `x`.
pub fn pairwise_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let x = x.as_standard_layout();
    let n = x.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    d.as_slice_mut()
        .expect("fresh array is contiguous")
        .par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let xi = x.row(i);
            let xi = xi.as_slice().expect("standard layout");
            for (j, v) in row.iter_mut().enumerate() {
                if j != i {
                    *v = sq_dist(xi, x.row(j).as_slice().expect("standard layout")).sqrt();
                }
            }
        });
    d
}

pub fn silhouette(x: ArrayView2<'_, f64>, assign: &[usize]) -> Result<f64> {
    silhouette_from_distances(pairwise_distances(x).view(), assign)
}

/// Mean silhouette width given precomputed distances. Points in singleton
/// clusters score 0.
pub fn silhouette_from_distances(d: ArrayView2<'_, f64>, assign: &[usize]) -> Result<f64> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::InvalidInput("distance matrix must be square".into()));
    }
    let k = check_labels(n, assign)?;
    let sizes = cluster_sizes(assign, k);
    let occupied = sizes.iter().filter(|&&s| s > 0).count();
    if occupied < 2 {
        return Err(Error::InvalidInput("silhouette needs at least two clusters".into()));
    }
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assign[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, &v) in d.row(i).iter().enumerate() {
                sums[assign[j]] += v;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 { (b - a) / m } else { 0.0 }
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}

fn centroids(x: ArrayView2<'_, f64>, assign: &[usize], k: usize) -> Array2<f64> {
    let sizes = cluster_sizes(assign, k);
    let mut c = Array2::<f64>::zeros((k, x.ncols()));
    for (row, &a) in x.rows().into_iter().zip(assign) {
        let mut target = c.row_mut(a);
        target += &row;
    }
    for (j, mut row) in c.rows_mut().into_iter().enumerate() {
        if sizes[j] > 0 {
            row /= sizes[j] as f64;
        }
    }
    c
}

/// Between-to-within dispersion ratio. Returns `f64::INFINITY` when every
/// cluster has zero spread.
pub fn calinski_harabasz(x: ArrayView2<'_, f64>, assign: &[usize]) -> Result<f64> {
    let n = x.nrows();
    let k = check_labels(n, assign)?;
    let sizes = cluster_sizes(assign, k);
    let occupied = sizes.iter().filter(|&&s| s > 0).count();
    if occupied < 2 || occupied >= n {
        return Err(Error::InvalidInput(format!(
            "Calinski-Harabasz needs 2 <= K < n, got K={occupied}, n={n}"
        )));
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let c = centroids(x, assign, k);
    let mut between = 0.0;
    for j in 0..k {
        if sizes[j] > 0 {
            between += sizes[j] as f64 * sq_dist(c.row(j).as_slice().unwrap(), mean.as_slice().unwrap());
        }
    }
    let within: f64 = x
        .rows()
        .into_iter()
        .zip(assign)
        .map(|(r, &a)| r.iter().zip(c.row(a)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum();
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(between * (n - occupied) as f64 / (within * (occupied - 1) as f64))
}

pub fn davies_bouldin(x: ArrayView2<'_, f64>, assign: &[usize]) -> Result<f64> {
    let n = x.nrows();
    let k = check_labels(n, assign)?;
    let sizes = cluster_sizes(assign, k);
    let live: Vec<usize> = (0..k).filter(|&j| sizes[j] > 0).collect();
    if live.len() < 2 {
        return Err(Error::InvalidInput("Davies-Bouldin needs at least two clusters".into()));
    }
    let c = centroids(x, assign, k);
    let mut scatter = vec![0.0; k];
    for (r, &a) in x.rows().into_iter().zip(assign) {
        scatter[a] += r.iter().zip(c.row(a)).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
    }
    for j in &live {
        scatter[*j] /= sizes[*j] as f64;
    }
    let mut total = 0.0;
    for &i in &live {
        let mut worst = 0.0f64;
        for &j in &live {
            if i == j {
                continue;
            }
            let sep = sq_dist(c.row(i).as_slice().unwrap(), c.row(j).as_slice().unwrap())
                .sqrt()
                .max(1e-12);
            worst = worst.max((scatter[i] + scatter[j]) / sep);
        }
        total += worst;
    }
    Ok(total / live.len() as f64)
}

/// Uniform reference samples over the per-feature bounding box of `x`.
pub fn reference_samples(x: ArrayView2<'_, f64>, b: usize, seed: u64) -> Result<Vec<Array2<f64>>> {
    let (n, p) = x.dim();
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("gap statistic needs a non-empty matrix".into()));
    }
    let lo: Vec<f64> = x.columns().into_iter().map(|c| c.fold(f64::INFINITY, |m, &v| m.min(v))).collect();
    let hi: Vec<f64> = x.columns().into_iter().map(|c| c.fold(f64::NEG_INFINITY, |m, &v| m.max(v))).collect();
    if lo.iter().zip(&hi).all(|(l, h)| l == h) {
        return Err(Error::InvalidInput("gap statistic undefined for zero-variance data".into()));
    }
    Ok((0..b)
        .map(|r| {
            let mut rng = seed::rng(seed::derive_seed(seed, r as u64));
            Array2::from_shape_fn((n, p), |(_, j)| lo[j] + (hi[j] - lo[j]) * rng.random::<f64>())
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub gap: f64,
    /// Standard error term `sd(log W*) * sqrt(1 + 1/B)`.
    pub s_k: f64,
}

/// Gap from an observed within-cluster dispersion and the dispersions of
/// the reference samples clustered at the same K. Dispersions are floored
/// at `floor` before taking logs.
pub fn gap_from_dispersions(observed: f64, reference: &[f64], floor: f64) -> Gap {
    let b = reference.len() as f64;
    let logs: Vec<f64> = reference.iter().map(|w| w.max(floor).ln()).collect();
    let mean = logs.iter().sum::<f64>() / b;
    let sd = (logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / b).sqrt();
    Gap {
        gap: mean - observed.max(floor).ln(),
        s_k: sd * (1.0 + 1.0 / b).sqrt(),
    }
}

/// Gap statistic at a single K, clustering `x` and `b` uniform reference
/// samples with the same K-means settings.
pub fn gap_statistic(x: ArrayView2<'_, f64>, k: usize, b: usize, seed: u64, opts: &KMeansOptions) -> Result<Gap> {
    if b == 0 {
        return Err(Error::InvalidInput("gap statistic needs at least one reference".into()));
    }
    let refs = reference_samples(x, b, seed::derive_seed(seed, 0x9a9))?;
    let observed = kmeans(x, k, opts, seed)?.inertia;
    let reference: Vec<f64> = refs
        .iter()
        .enumerate()
        .map(|(r, xr)| kmeans(xr.view(), k, opts, seed::derive_seed(seed, r as u64 + 1)).map(|c| c.inertia))
        .collect::<Result<_>>()?;
    Ok(gap_from_dispersions(observed, &reference, dispersion_floor(x)))
}

/// Small positive floor for dispersions, relative to the total sum of
/// squares, so that perfectly tight clusterings keep a finite log.
pub fn dispersion_floor(x: ArrayView2<'_, f64>) -> f64 {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let tss: f64 = x
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(&mean).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum();
    (tss * 1e-12).max(f64::MIN_POSITIVE)
}
