//! Solver for `W C + C W^H = F`.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use super::eig::{schur, Eigen};
use super::{dagger, eig, ensure_finite, ensure_square, identity, max_abs, CMatrix, Lu};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LyapunovOptions {
    /// Above this eigenvector condition estimate the Schur-based solver is
    /// used instead of the eigenbasis division.
    pub eigvec_condition_limit: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        LyapunovOptions { eigvec_condition_limit: 1e8 }
    }
}

/// Solve `W C + C W^H = F`; the result is Hermitian when `F` is.
pub fn lyapunov_solve(w: &CMatrix, f: &CMatrix) -> Result<CMatrix> {
    lyapunov_solve_with(w, f, LyapunovOptions::default())
}

pub fn lyapunov_solve_with(w: &CMatrix, f: &CMatrix, opts: LyapunovOptions) -> Result<CMatrix> {
    let n = ensure_square(w)?;
    let nf = ensure_square(f)?;
    if nf != n {
        return Err(Error::DimensionMismatch { expected: n, found: nf });
    }
    ensure_finite(w)?;
    ensure_finite(f)?;

    let e = eig(w)?;
    let c = if e.condition <= opts.eigvec_condition_limit {
        eigenbasis_solve(&e, f, w)?
    } else {
        schur_solve(w, f)?
    };
    Ok(hermitian_part_if(&c, f))
}

fn hermitian_part_if(c: &CMatrix, f: &CMatrix) -> CMatrix {
    if max_abs(&(f - &dagger(f))) == 0.0 {
        (c + &dagger(c)).mapv(|z| z * 0.5)
    } else {
        c.clone()
    }
}

fn pair_tolerance(w: &CMatrix) -> f64 {
    1e3 * f64::EPSILON * max_abs(w).max(1.0)
}

fn eigenbasis_solve(e: &Eigen, f: &CMatrix, w: &CMatrix) -> Result<CMatrix> {
    let n = e.values.len();
    let tol = pair_tolerance(w);
    let s = &e.vectors;
    let lu = Lu::new(s)?;
    // F_hat = S^{-1} F S^{-H}
    let x = lu.solve(f)?;
    let f_hat = dagger(&lu.solve(&dagger(&x))?);
    let mut c_hat = Array2::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            let d = e.values[a] + e.values[b].conj();
            if d.norm() <= tol {
                return Err(Error::LyapunovSingular { a, b, sum: d.norm() });
            }
            c_hat[[a, b]] = f_hat[[a, b]] / d;
        }
    }
    Ok(s.dot(&c_hat).dot(&dagger(s)))
}

/// Bartels–Stewart on the complex Schur form `W = U T U^H`.
pub(crate) fn schur_solve(w: &CMatrix, f: &CMatrix) -> Result<CMatrix> {
    let n = w.nrows();
    let tol = pair_tolerance(w);
    let (u, t) = schur(w)?;
    let f_t = dagger(&u).dot(f).dot(&u);
    let mut y: CMatrix = Array2::zeros((n, n));
    for b in (0..n).rev() {
        // (T + conj(T_bb)) y_b = f_b - sum_{c > b} conj(T_bc) y_c
        let mut rhs: Array1<C64> = f_t.column(b).to_owned();
        for cidx in (b + 1)..n {
            let coef = t[[b, cidx]].conj();
            if coef != C64::new(0.0, 0.0) {
                rhs.scaled_add(-coef, &y.column(cidx));
            }
        }
        let shift = t[[b, b]].conj();
        for a in (0..n).rev() {
            let mut s = rhs[a];
            for p in (a + 1)..n {
                s -= t[[a, p]] * y[[p, b]];
            }
            let d = t[[a, a]] + shift;
            if d.norm() <= tol {
                return Err(Error::LyapunovSingular { a, b, sum: d.norm() });
            }
            y[[a, b]] = s / d;
        }
    }
    Ok(u.dot(&y).dot(&dagger(&u)))
}

/// Dense Kronecker solve `(I ⊗ W + conj(W) ⊗ I) vec(C) = vec(F)`.
/// O(n^6); intended as an independent check for small `n`.
pub fn lyapunov_solve_vectorized(w: &CMatrix, f: &CMatrix) -> Result<CMatrix> {
    let n = ensure_square(w)?;
    let eye = identity(n);
    let op = ndarray::linalg::kron(&eye, w) + ndarray::linalg::kron(&w.mapv(|z| z.conj()), &eye);
    // column-stacking vec
    let rhs = Array2::from_shape_fn((n * n, 1), |(k, _)| f[[k % n, k / n]]);
    let sol = Lu::new(&op).map_err(|_| Error::LyapunovSingular { a: 0, b: 0, sum: 0.0 })?.solve(&rhs)?;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| sol[[j * n + i, 0]]))
}
