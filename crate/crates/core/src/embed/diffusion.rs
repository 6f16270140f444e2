use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gram, matmul, sq_dist, sym_eigenvalues};

fn check_square(a: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    Ok(())
}

/// `(K + K^T) / 2`.
pub fn symmetrize(k: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_square(k)?;
    let n = k.nrows();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (k[[i, j]] + k[[j, i]])))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionOperator {
    /// Row-stochastic transition matrix.
    pub p: Array2<f64>,
    /// Row sums of the affinity it was normalized from.
    pub degrees: Vec<f64>,
    /// Rows whose affinity was all zero and got a tiny self-loop.
    pub repaired_rows: Vec<usize>,
}

const ZERO_ROW_LOOP: f64 = 1e-12;

/// Row-normalize a symmetric nonnegative affinity. All-zero rows get a
/// tiny self-loop first so every row is a distribution.
pub fn diffusion_operator(a: ArrayView2<'_, f64>) -> Result<DiffusionOperator> {
    check_square(a)?;
    if a.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidInput("affinity must be finite and nonnegative".into()));
    }
    let n = a.nrows();
    let mut p = a.to_owned();
    let mut repaired_rows = Vec::new();
    let mut degrees = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = p.row_mut(i);
        let mut s: f64 = row.sum();
        if s == 0.0 {
            row[i] = ZERO_ROW_LOOP;
            s = ZERO_ROW_LOOP;
            repaired_rows.push(i);
        }
        row /= s;
        degrees.push(s);
    }
    if !repaired_rows.is_empty() {
        log::info!("{} all-zero affinity rows given a self-loop", repaired_rows.len());
    }
    Ok(DiffusionOperator {
        p,
        degrees,
        repaired_rows,
    })
}

impl DiffusionOperator {
    /// Wrap a matrix that is already row-stochastic and symmetric.
    pub fn from_symmetric_stochastic(p: Array2<f64>) -> Result<Self> {
        check_square(p.view())?;
        for r in p.rows() {
            if (r.sum() - 1.0).abs() > 1e-10 || r.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidInput("rows must be distributions".into()));
            }
        }
        let n = p.nrows();
        Ok(DiffusionOperator {
            p,
            degrees: vec![1.0; n],
            repaired_rows: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    /// Eigenvalues of the symmetric conjugate `D^{1/2} P D^{-1/2}`, which
    /// shares its spectrum with `P`.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        let s: Vec<f64> = self.degrees.iter().map(|d| d.sqrt()).collect();
        let n = self.n();
        let conj = Array2::from_shape_fn((n, n), |(i, j)| {
            let v = s[i] * self.p[[i, j]] / s[j];
            let w = s[j] * self.p[[j, i]] / s[i];
            0.5 * (v + w)
        });
        sym_eigenvalues(conj.view())
    }

    /// `P^t` by repeated squaring.
    pub fn power(&self, t: usize) -> Array2<f64> {
        assert!(t >= 1, "diffusion time must be positive");
        let mut result: Option<Array2<f64>> = None;
        let mut base = self.p.clone();
        let mut e = t;
        loop {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => matmul(r.view(), base.view()),
                });
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = matmul(base.view(), base.view());
        }
        result.expect("t >= 1")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSelection {
    pub t: usize,
    /// Von Neumann entropy for t = 1..=t_max.
    pub entropy: Vec<f64>,
}

/// Von Neumann entropy of the spectrum raised to each power 1..=t_max.
pub fn entropy_curve(spectrum: &[f64], t_max: usize) -> Vec<f64> {
    let abs: Vec<f64> = spectrum.iter().map(|l| l.abs()).collect();
    (1..=t_max)
        .map(|t| {
            let powered: Vec<f64> = abs.iter().map(|l| l.powi(t as i32)).collect();
            let total: f64 = powered.iter().sum();
            if total <= 0.0 {
                return 0.0;
            }
            -powered
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| {
                    let q = v / total;
                    q * q.ln()
                })
                .sum::<f64>()
        })
        .collect()
}

/// Diffusion time at the knee of the entropy curve: the largest second
/// difference. Flat curves and ranges shorter than three give t = 1.
pub fn select_t(op: &DiffusionOperator, t_max: usize) -> Result<TimeSelection> {
    if t_max == 0 {
        return Err(Error::InvalidInput("t_max must be at least 1".into()));
    }
    let entropy = entropy_curve(&op.spectrum()?, t_max);
    Ok(TimeSelection {
        t: knee(&entropy),
        entropy,
    })
}

/// 1-based index of the largest second difference of `curve`.
pub fn knee(curve: &[f64]) -> usize {
    if curve.len() < 3 {
        return 1;
    }
    let scale = curve.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut best = 0;
    let mut best_val = 0.0;
    for i in 1..curve.len() - 1 {
        let d2 = curve[i - 1] - 2.0 * curve[i] + curve[i + 1];
        if d2 > best_val + 1e-12 * scale {
            best_val = d2;
            best = i;
        }
    }
    if best == 0 { 1 } else { best + 1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialDistances {
    pub d: Array2<f64>,
    pub eps: f64,
    pub t: usize,
}

/// Euclidean distances between rows of `-ln(P^t + eps)`.
pub fn potential_distances(op: &DiffusionOperator, t: usize, eps: f64) -> Result<PotentialDistances> {
    if t == 0 {
        return Err(Error::InvalidInput("diffusion time must be positive".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidInput("log floor must be positive".into()));
    }
    let u = op.power(t).mapv(|v| -(v.max(0.0) + eps).ln());
    Ok(PotentialDistances {
        d: row_distances(&u),
        eps,
        t,
    })
}

/// Pairwise Euclidean distances between rows via the Gram matrix, with
/// nearly coincident pairs recomputed directly to avoid cancellation.
pub fn row_distances(u: &Array2<f64>) -> Array2<f64> {
    let n = u.nrows();
    let g = gram(u.view());
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let norms = g[[i, i]] + g[[j, j]];
            let sq = norms - 2.0 * g[[i, j]];
            let v = if sq <= 1e-6 * norms {
                sq_dist(u.row(i).as_slice().expect("owned rows"), u.row(j).as_slice().expect("owned rows")).sqrt()
            } else {
                sq.sqrt()
            };
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}
