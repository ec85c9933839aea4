//! Jordan–Wigner fermions on `L` sites.
//!
//! Site 1 is the leftmost tensor factor: `c_i = Z ⊗ .. ⊗ Z ⊗ a ⊗ 1 ⊗ .. ⊗ 1`
//! with `a = [[0, 1], [0, 0]]` in the basis `{|0>, |1>}` and `Z = diag(1, -1)`.
//! The basis state with occupied set `S` is `prod_{s in S, ascending} c_s^† |0>`
//! and has index `sum_{s in S} 2^{L-1-s}` (zero-based `s`).

use ndarray::linalg::kron;
use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::matrix::{dagger, ensure_square, identity, lu_logdet, max_abs, CMatrix};

pub const MAX_ORACLE_SITES: usize = 4;
pub const MAX_ORACLE_SITES_EXTENDED: usize = 5;

const ANTICOMMUTATOR_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleLimit {
    #[default]
    Standard,
    /// Also admits `L = 5` (superoperator dimension 1024).
    Extended,
}

impl OracleLimit {
    pub fn max_sites(self) -> usize {
        match self {
            OracleLimit::Standard => MAX_ORACLE_SITES,
            OracleLimit::Extended => MAX_ORACLE_SITES_EXTENDED,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FockSpace {
    len: usize,
    c: Vec<CMatrix>,
}

impl FockSpace {
    pub fn new(len: usize, limit: OracleLimit) -> Result<Self> {
        let max = limit.max_sites();
        if len == 0 || len > max {
            return Err(Error::OracleSize { size: len, max });
        }
        let z = Array2::from_diag(&ndarray::arr1(&[C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]));
        let a = ndarray::arr2(&[[C64::new(0.0, 0.0), C64::new(1.0, 0.0)], [C64::new(0.0, 0.0), C64::new(0.0, 0.0)]]);
        let one = identity(2);
        let c = (0..len)
            .map(|site| {
                let mut op = identity(1);
                for k in 0..len {
                    let factor = if k < site {
                        &z
                    } else if k == site {
                        &a
                    } else {
                        &one
                    };
                    op = kron(&op, factor);
                }
                op
            })
            .collect();
        let space = FockSpace { len, c };
        space.check_anticommutation()?;
        Ok(space)
    }

    fn check_anticommutation(&self) -> Result<()> {
        let eye = identity(self.dim());
        for i in 0..self.len {
            for j in 0..self.len {
                let ci = &self.c[i];
                let cj = &self.c[j];
                let cjd = dagger(cj);
                let mixed = ci.dot(&cjd) + cjd.dot(ci);
                let want = if i == j { eye.clone() } else { Array2::zeros(eye.dim()) };
                let same = ci.dot(cj) + cj.dot(ci);
                let defect = max_abs(&(mixed - want)).max(max_abs(&same));
                if defect > ANTICOMMUTATOR_TOL {
                    return Err(Error::InvalidState(format!("anticommutator defect {defect:.3e} at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        1 << self.len
    }

    pub fn c(&self, i: usize) -> &CMatrix {
        &self.c[i]
    }

    pub fn c_dag(&self, i: usize) -> CMatrix {
        dagger(&self.c[i])
    }

    pub fn number(&self, i: usize) -> CMatrix {
        self.c_dag(i).dot(&self.c[i])
    }

    /// `sum_ij x_ij c_i^† c_j`.
    pub fn quadratic_form(&self, x: &CMatrix) -> Result<CMatrix> {
        let n = ensure_square(x)?;
        if n != self.len {
            return Err(Error::DimensionMismatch { expected: self.len, found: n });
        }
        let mut out = Array2::zeros((self.dim(), self.dim()));
        for i in 0..n {
            let cd = self.c_dag(i);
            for j in 0..n {
                if x[[i, j]] != C64::new(0.0, 0.0) {
                    out.scaled_add(x[[i, j]], &cd.dot(&self.c[j]));
                }
            }
        }
        Ok(out)
    }

    /// Many-body operator `G(A)` with `G(A) c_j^† G(A)^{-1} = sum_i A_ij c_i^†`
    /// and `G(A)|0> = |0>`. Its matrix elements are minors of `A`, so
    /// `G(e^X) = e^{sum X_ij c_i^† c_j}`; unlike the exponential form this
    /// also covers singular `A`.
    pub fn second_quantize(&self, a: &CMatrix) -> Result<CMatrix> {
        let n = ensure_square(a)?;
        if n != self.len {
            return Err(Error::DimensionMismatch { expected: self.len, found: n });
        }
        let dim = self.dim();
        let sites = |b: usize| -> Vec<usize> { (0..n).filter(|&s| b & (1 << (n - 1 - s)) != 0).collect() };
        let mut out = Array2::zeros((dim, dim));
        for row in 0..dim {
            let rs = sites(row);
            for col in 0..dim {
                let cs = sites(col);
                if rs.len() != cs.len() {
                    continue;
                }
                out[[row, col]] = if rs.is_empty() {
                    C64::new(1.0, 0.0)
                } else {
                    let sub = Array2::from_shape_fn((rs.len(), cs.len()), |(p, q)| a[[rs[p], cs[q]]]);
                    match lu_logdet(&sub) {
                        Ok((_, d)) => d.value(),
                        Err(Error::Singular { .. }) => C64::new(0.0, 0.0),
                        Err(e) => return Err(e),
                    }
                };
            }
        }
        Ok(out)
    }

    /// `|0><0|`.
    pub fn vacuum_density(&self) -> CMatrix {
        let mut rho = Array2::zeros((self.dim(), self.dim()));
        rho[[0, 0]] = C64::new(1.0, 0.0);
        rho
    }

    /// `C_ij = tr(rho c_j^† c_i)`.
    pub fn covariance(&self, rho: &CMatrix) -> CMatrix {
        Array2::from_shape_fn((self.len, self.len), |(i, j)| {
            let op = self.c_dag(j).dot(&self.c[i]);
            trace_product(rho, &op)
        })
    }
}

/// `tr(a b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut s = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            s += a[[i, k]] * b[[k, i]];
        }
    }
    s
}
