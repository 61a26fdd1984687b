//! Dense linear-algebra helpers shared by the objective and oracle layers.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Pivots smaller than this fraction of the largest pivot are treated as singular.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

/// Solves `a x = b` for symmetric positive-definite `a` through a Cholesky factorization.
pub fn spd_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    crate::error::check_dim(a.nrows(), b.len())?;
    let largest_diag = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let Some(chol) = Cholesky::new(a.clone()) else {
        return Err(Error::Singular {
            smallest: 0.0,
            largest: largest_diag,
        });
    };
    let pivots: Vec<f64> = chol.l_dirty().diagonal().iter().map(|v| v * v).collect();
    let largest = pivots.iter().cloned().fold(0.0_f64, f64::max);
    let smallest = pivots.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smallest >= PIVOT_THRESHOLD * largest) || largest == 0.0 {
        return Err(Error::Singular { smallest, largest });
    }
    Ok(chol.solve(b))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(a: &Matrix) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(a.clone());
    let lo = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Largest absolute asymmetry relative to the largest entry.
pub fn asymmetry(a: &Matrix) -> f64 {
    let scale = a
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Mean of vectors summed in slice order.
pub fn ordered_mean<'a, I>(dim: usize, items: I) -> Vector
where
    I: IntoIterator<Item = &'a Vector>,
{
    let mut acc = Vector::zeros(dim);
    let mut count = 0usize;
    for v in items {
        acc += v;
        count += 1;
    }
    if count > 0 {
        acc /= count as f64;
    }
    acc
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}
