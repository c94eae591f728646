//! Small dense helpers shared by the statistics and update code.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::transforms::OrthonormalTransform;

/// Induced infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Row means of a member matrix (one member per column).
pub fn row_mean(members: &DMatrix<f64>) -> DVector<f64> {
    let count = members.ncols() as f64;
    let mut mean = DVector::zeros(members.nrows());
    for column in members.column_iter() {
        mean += column;
    }
    mean / count
}

/// Members minus their mean.
pub fn anomalies(members: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = row_mean(members);
    let mut out = members.clone();
    for mut column in out.column_iter_mut() {
        column -= &mean;
    }
    out
}

/// Applies `F` (or `Fᵀ` when `inverse`) to every column. Columns are processed
/// in parallel and written back in order, so the result does not depend on
/// the worker count.
pub fn transform_columns(
    transform: &OrthonormalTransform,
    members: &DMatrix<f64>,
    inverse: bool,
) -> DMatrix<f64> {
    let rows = members.nrows();
    assert_eq!(rows, transform.size());
    let columns: Vec<Vec<f64>> = (0..members.ncols())
        .into_par_iter()
        .map(|k| {
            let column: Vec<f64> = members.column(k).iter().copied().collect();
            let mut out = vec![0.0; rows];
            if inverse {
                transform.inverse_into(&column, &mut out);
            } else {
                transform.forward_into(&column, &mut out);
            }
            out
        })
        .collect();
    DMatrix::from_fn(rows, members.ncols(), |i, k| columns[k][i])
}

/// Per-row `(1/(N-1)) Σ_k (a_ik - ā_i)(b_ik - b̄_i)`.
pub fn paired_row_covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    assert_eq!(a.shape(), b.shape());
    let count = a.ncols();
    let scale = 1.0 / (count as f64 - 1.0);
    let mean_a = row_mean(a);
    let mean_b = row_mean(b);
    (0..a.nrows())
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..count {
                acc += (a[(i, k)] - mean_a[i]) * (b[(i, k)] - mean_b[i]);
            }
            acc * scale
        })
        .collect()
}

/// Solves `A x = b` for symmetric positive semidefinite `A` in the
/// pseudo-inverse sense: Cholesky when it succeeds, otherwise a symmetric
/// eigendecomposition discarding negligible eigenvalues.
pub fn psd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = a.clone().cholesky() {
        return chol.solve(b);
    }
    psd_pseudo_inverse(a) * b
}

pub fn psd_pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cutoff = top * (n.max(1) as f64) * f64::EPSILON;
    let mut out = DMatrix::zeros(n, n);
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(j);
            out += (v * v.transpose()) / lambda;
        }
    }
    out
}
