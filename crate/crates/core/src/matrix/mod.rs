//! Dense complex linear algebra used throughout the crate.
//!
//! Matrices are plain `ndarray::Array2<Complex64>`; every operation checks
//! squareness and finiteness at its entry point.

mod eig;
mod expm;
mod lu;
mod lyapunov;

pub use eig::{eig, hermitian_eigen, Eigen};
pub use expm::expm;
pub use lu::{lu_logdet, LogDet, Lu};
pub use lyapunov::{lyapunov_solve, lyapunov_solve_vectorized, LyapunovOptions};

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMatrix = Array2<C64>;

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(n: usize) -> CMatrix {
    Array2::from_diag_elem(n, c(1.0))
}

pub fn dagger(a: &CMatrix) -> CMatrix {
    a.t().mapv(|z| z.conj())
}

pub fn from_real_diag(d: &[f64]) -> CMatrix {
    let mut m = Array2::zeros((d.len(), d.len()));
    for (i, &v) in d.iter().enumerate() {
        m[[i, i]] = c(v);
    }
    m
}

/// Maximum absolute column sum.
pub fn norm1(a: &CMatrix) -> f64 {
    a.columns().into_iter().map(|col| col.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    max_abs(&(a - &dagger(a)))
}

pub(crate) fn ensure_square(a: &CMatrix) -> Result<usize> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    Ok(rows)
}

pub(crate) fn ensure_finite(a: &CMatrix) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub(crate) fn to_nalgebra(a: &CMatrix) -> DMatrix<C64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_nalgebra(a: &DMatrix<C64>) -> CMatrix {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}
