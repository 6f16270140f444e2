//! Thin bridge between row-major `ndarray` storage and `faer` kernels.

use faer::{Accum, Mat, MatMut, MatRef, Side};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

fn as_faer<'a>(a: &'a ArrayView2<'a, f64>) -> Option<MatRef<'a, f64>> {
    a.as_slice()
        .map(|s| MatRef::from_row_major_slice(s, a.nrows(), a.ncols()))
}

fn to_faer(a: ArrayView2<'_, f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_faer(m: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn with_faer<R>(a: ArrayView2<'_, f64>, f: impl FnOnce(MatRef<'_, f64>) -> R) -> R {
    match as_faer(&a) {
        Some(m) => f(m),
        None => {
            let owned = to_faer(a);
            f(owned.as_ref())
        }
    }
}

/// `out = a * b`, written straight into a row-major buffer.
fn product_into(out: &mut Array2<f64>, a: MatRef<'_, f64>, b: MatRef<'_, f64>) {
    let (r, c) = out.dim();
    let slice = out.as_slice_mut().expect("owned arrays are standard layout");
    let dst = MatMut::from_row_major_slice_mut(slice, r, c);
    faer::linalg::matmul::matmul(dst, Accum::Replace, a, b, 1.0, faer::get_global_parallelism());
}

/// Dense product `a * b`.
pub fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    with_faer(a, |fa| with_faer(b, |fb| product_into(&mut out, fa, fb)));
    out
}

/// `a * b^T`.
pub fn matmul_nt(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.ncols(), "matmul_nt shape mismatch");
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    with_faer(a, |fa| with_faer(b, |fb| product_into(&mut out, fa, fb.transpose())));
    out
}

/// `a * a^T`.
pub fn gram(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), a.nrows()));
    with_faer(a, |fa| product_into(&mut out, fa, fa.transpose()));
    out
}

/// Symmetric eigendecomposition. Eigenvalues ascending; eigenvectors are
/// the columns of the returned matrix. Only the lower triangle is read.
pub fn sym_eigen(a: ArrayView2<'_, f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    check_square(a)?;
    with_faer(a, |fa| {
        let evd = fa
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
        let s = evd.S().column_vector();
        let values = (0..s.nrows()).map(|i| s[i]).collect();
        Ok((values, from_faer(evd.U())))
    })
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    check_square(a)?;
    with_faer(a, |fa| {
        fa.self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Numerical(format!("eigenvalue computation failed: {e:?}")))
    })
}

fn check_square(a: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to eigensolver".into()));
    }
    Ok(())
}

/// Rebuild `V diag(f(λ)) V^T`.
pub fn spectral_map(values: &[f64], vectors: &Array2<f64>, f: impl Fn(f64) -> f64) -> Array2<f64> {
    let mut scaled = vectors.clone();
    for (j, &l) in values.iter().enumerate() {
        let w = f(l);
        scaled.column_mut(j).mapv_inplace(|v| v * w);
    }
    matmul(scaled.view(), vectors.t())
}

/// Average `a` with its transpose in place.
pub fn symmetrize_in_place(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    // Eight independent partial sums let the loop vectorize.
    let mut acc = [0.0; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    acc.iter().sum::<f64>() + tail
}
