use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdsOptions {
    pub max_iter: usize,
    /// Relative stress improvement below which iteration stops.
    pub tol: f64,
}

impl Default for MdsOptions {
    fn default() -> Self {
        MdsOptions { max_iter: 300, tol: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsFit {
    pub coords: Array2<f64>,
    pub stress: f64,
    /// Normalized stress at the start and after every iteration.
    pub stress_trace: Vec<f64>,
    pub n_iter: usize,
}

fn check_distances(d: ArrayView2<'_, f64>) -> Result<()> {
    if d.nrows() != d.ncols() {
        return Err(Error::DimensionMismatch {
            expected: d.nrows(),
            got: d.ncols(),
        });
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distance matrix".into()));
    }
    Ok(())
}

/// Leading eigenpairs of the double-centered squared distances, largest
/// first. Each eigenvector's sign is fixed so its cubed entries sum to a
/// nonnegative value, which does not depend on row order.
#[derive(Debug, Clone)]
pub struct ClassicalBasis {
    values: Vec<f64>,
    vectors: Array2<f64>,
}

impl ClassicalBasis {
    pub fn new(d: ArrayView2<'_, f64>, m_max: usize) -> Result<Self> {
        check_distances(d)?;
        let n = d.nrows();
        let sq = d.mapv(|v| v * v);
        let row_means = sq.mean_axis(Axis(1)).expect("non-empty");
        let grand = row_means.mean().expect("non-empty");
        let b = Array2::from_shape_fn((n, n), |(i, j)| -0.5 * (sq[[i, j]] - row_means[i] - row_means[j] + grand));
        let (values, vectors) = sym_eigen(b.view())?;
        let keep = m_max.min(n);
        let mut top_values = Vec::with_capacity(keep);
        let mut top = Array2::zeros((n, keep));
        for c in 0..keep {
            let src = n - 1 - c;
            let mut v = vectors.column(src).to_owned();
            if v.iter().map(|x| x * x * x).sum::<f64>() < 0.0 {
                v.mapv_inplace(|x| -x);
            }
            top.column_mut(c).assign(&v);
            top_values.push(values[src]);
        }
        Ok(ClassicalBasis {
            values: top_values,
            vectors: top,
        })
    }

    /// Classical scaling coordinates in `m` dimensions; dimensions with a
    /// non-positive eigenvalue are zero.
    pub fn coords(&self, m: usize) -> Array2<f64> {
        let n = self.vectors.nrows();
        let mut y = Array2::zeros((n, m));
        for c in 0..m.min(self.values.len()) {
            let w = self.values[c].max(0.0).sqrt();
            y.column_mut(c).assign(&self.vectors.column(c).mapv(|v| v * w));
        }
        y
    }
}

/// `sqrt(sum (d_ij - |y_i - y_j|)^2 / sum d_ij^2)` over pairs i < j.
pub fn normalized_stress(d: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let n = d.nrows();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let e = embedded_distance(y, i, j);
            num += (d[[i, j]] - e) * (d[[i, j]] - e);
            den += d[[i, j]] * d[[i, j]];
        }
    }
    if den == 0.0 { 0.0 } else { (num / den).sqrt() }
}

fn embedded_distance(y: ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    y.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Stress majorization (Guttman transform) from `init`.
pub fn smacof(d: ArrayView2<'_, f64>, init: Array2<f64>, opts: &MdsOptions) -> Result<MdsFit> {
    check_distances(d)?;
    let n = d.nrows();
    if init.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: init.nrows(),
        });
    }
    let d = d.as_standard_layout();
    let dv = d.as_slice().expect("standard layout");
    let total: f64 = (0..n).map(|i| dv[i * n + i + 1..(i + 1) * n].iter().map(|v| v * v).sum::<f64>()).sum();
    let mut y = init.as_standard_layout().into_owned();
    let mut trace: Vec<f64> = Vec::new();
    let mut n_iter = 0;
    loop {
        let (raw, next) = guttman_pass(dv, y.view());
        let stress = if total == 0.0 { 0.0 } else { (raw / total).sqrt() };
        if let Some(&prev) = trace.last() {
            if stress > prev + 1e-10 * prev.max(1.0) {
                return Err(Error::Numerical(format!("SMACOF stress increased from {prev} to {stress}")));
            }
        }
        trace.push(stress);
        let converged = trace.len() >= 2 && {
            let prev = trace[trace.len() - 2];
            prev - stress <= opts.tol * prev
        };
        if converged || n_iter >= opts.max_iter || stress == 0.0 {
            return Ok(MdsFit {
                coords: y,
                stress,
                stress_trace: trace,
                n_iter,
            });
        }
        y = next;
        n_iter += 1;
    }
}

const LANES: usize = 8;

/// Sum with eight independent accumulators so the loop vectorizes; the
/// order is fixed, so results are reproducible.
fn lane_sum(xs: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let chunks = xs.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().sum();
    for ch in chunks {
        for k in 0..LANES {
            acc[k] += ch[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn lane_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// One sweep over the pairs i < j: the raw stress of `y` and its Guttman
/// transform `B(y) y / n`. Coordinates are held column-major so the inner
/// loops run over contiguous `j`.
fn guttman_pass(d: &[f64], y: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let (n, m) = y.dim();
    let mut cols = vec![0.0; m * n];
    for (j, row) in y.rows().into_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            cols[c * n + j] = v;
        }
    }
    let mut acc = vec![0.0; m * n];
    let mut diag = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut resid = vec![0.0; n];
    let mut raw = 0.0;
    for i in 0..n.saturating_sub(1) {
        let len = n - i - 1;
        let w = &mut w[..len];
        let resid = &mut resid[..len];
        w.fill(0.0);
        for c in 0..m {
            let yic = cols[c * n + i];
            for (s, &v) in w.iter_mut().zip(&cols[c * n + i + 1..(c + 1) * n]) {
                let t = yic - v;
                *s += t * t;
            }
        }
        for ((s, r), &dij) in w.iter_mut().zip(resid.iter_mut()).zip(&d[i * n + i + 1..(i + 1) * n]) {
            let e = s.sqrt();
            *r = (dij - e) * (dij - e);
            *s = if e > 0.0 { dij / e } else { 0.0 };
        }
        raw += lane_sum(resid);
        diag[i] += lane_sum(w);
        for (dj, &wv) in diag[i + 1..].iter_mut().zip(w.iter()) {
            *dj += wv;
        }
        for c in 0..m {
            let yic = cols[c * n + i];
            let col = &cols[c * n + i + 1..(c + 1) * n];
            let (head, rest) = acc[c * n..(c + 1) * n].split_at_mut(i + 1);
            head[i] += lane_dot(w, col);
            for (a, &wv) in rest.iter_mut().zip(w.iter()) {
                *a += wv * yic;
            }
        }
    }
    let inv = 1.0 / n as f64;
    let next = Array2::from_shape_fn((n, m), |(j, c)| (diag[j] * cols[c * n + j] - acc[c * n + j]) * inv);
    (raw, next)
}

/// Classical initialization followed by SMACOF refinement.
pub fn mds(d: ArrayView2<'_, f64>, m: usize, opts: &MdsOptions) -> Result<MdsFit> {
    if m == 0 {
        return Err(Error::InvalidInput("embedding dimension must be at least 1".into()));
    }
    let basis = ClassicalBasis::new(d, m)?;
    smacof(d, basis.coords(m), opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSelection {
    pub m: usize,
    pub stress_by_dim: Vec<(usize, f64)>,
    /// Coordinates for each scanned dimension, in scan order.
    pub fits: Vec<MdsFit>,
}

impl DimensionSelection {
    pub fn chosen(&self) -> &MdsFit {
        let idx = self.stress_by_dim.iter().position(|&(m, _)| m == self.m).expect("chosen dim scanned");
        &self.fits[idx]
    }
}

/// Fit every dimension in `dims` and pick the smallest one whose stress is
/// within 1% of the best. A dimension whose refined stress comes out above
/// the previous one reuses the previous solution padded with a zero
/// column, keeping the stress curve non-increasing.
pub fn select_dimension(
    d: ArrayView2<'_, f64>,
    dims: std::ops::RangeInclusive<usize>,
    opts: &MdsOptions,
) -> Result<DimensionSelection> {
    let (lo, hi) = (*dims.start(), *dims.end());
    let n = d.nrows();
    if lo == 0 || lo > hi {
        return Err(Error::InvalidInput(format!("empty dimension range {lo}..={hi}")));
    }
    if hi >= n.max(2) {
        return Err(Error::InvalidInput(format!("dimension {hi} needs more than {n} points")));
    }
    let basis = ClassicalBasis::new(d, hi)?;
    let refined: Vec<MdsFit> = (lo..=hi)
        .into_par_iter()
        .map(|m| smacof(d, basis.coords(m), opts))
        .collect::<Result<_>>()?;
    let mut fits: Vec<MdsFit> = Vec::new();
    let mut stress_by_dim = Vec::new();
    for (m, mut fit) in (lo..=hi).zip(refined) {
        if let Some(prev) = fits.last() {
            if fit.stress > prev.stress {
                let mut padded = Array2::zeros((n, m));
                padded.slice_mut(s![.., ..m - 1]).assign(&prev.coords);
                fit = MdsFit {
                    coords: padded,
                    stress: prev.stress,
                    stress_trace: vec![prev.stress],
                    n_iter: 0,
                };
            }
        }
        stress_by_dim.push((m, fit.stress));
        fits.push(fit);
    }
    let best = stress_by_dim.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let threshold = best * 1.01 + 1e-9;
    let m = stress_by_dim.iter().find(|p| p.1 <= threshold).expect("minimum is within threshold").0;
    Ok(DimensionSelection { m, stress_by_dim, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn distances(points: &Array2<f64>) -> Array2<f64> {
        let n = points.nrows();
        Array2::from_shape_fn((n, n), |(i, j)| embedded_distance(points.view(), i, j))
    }

    #[test]
    fn collinear_points_embed_in_one_dim() {
        let p = array![[0.0], [1.0], [3.0], [7.0]];
        let fit = mds(distances(&p).view(), 1, &MdsOptions::default()).unwrap();
        assert!(fit.stress < 1e-6);
    }

    #[test]
    fn unit_square_recovered() {
        let p = array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let d = distances(&p);
        let fit = mds(d.view(), 2, &MdsOptions::default()).unwrap();
        assert!(fit.stress < 1e-6);
        let back = distances(&fit.coords);
        assert!(back.iter().zip(&d).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn stress_never_increases_from_noisy_start() {
        let mut rng = crate::seed::rng(2);
        let p = Array2::from_shape_fn((25, 4), |_| rng.random::<f64>());
        let d = distances(&p);
        let init = Array2::from_shape_fn((25, 2), |_| rng.random::<f64>());
        let fit = smacof(d.view(), init, &MdsOptions { max_iter: 200, tol: 0.0 }).unwrap();
        assert!(fit.stress_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(fit.n_iter > 5);
    }

    #[test]
    fn three_dimensional_blob_selects_three() {
        let mut rng = crate::seed::rng(8);
        let p = Array2::from_shape_fn((40, 3), |(_, j)| (j as f64 + 1.0) * (rng.random::<f64>() - 0.5));
        let sel = select_dimension(distances(&p).view(), 2..=10, &MdsOptions::default()).unwrap();
        assert_eq!(sel.m, 3);
        let s2 = sel.stress_by_dim[0].1;
        let s3 = sel.stress_by_dim[1].1;
        assert!(s2 > 100.0 * s3.max(1e-9));
        assert!(sel.stress_by_dim.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-9));
    }

    #[test]
    #[allow(clippy::reversed_empty_ranges)]
    fn single_dimension_range() {
        let p = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0]];
        let sel = select_dimension(distances(&p).view(), 2..=2, &MdsOptions::default()).unwrap();
        assert_eq!(sel.m, 2);
        assert!(select_dimension(distances(&p).view(), 3..=2, &MdsOptions::default()).is_err());
    }
}
