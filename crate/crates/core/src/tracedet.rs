//! Trace-determinant identities for products of exponentiated fermionic
//! quadratic forms `e^{X} = exp(sum_ij X_ij c_i^† c_j)`.
//!
//! Everything is expressed through the single-particle matrices `e^{X_k}`
//! and their inverses, so a factor may be given either by its generator
//! or directly by its exponential pair (useful when the generator, like a
//! Gaussian state's exponent, is never materialized).
//!
//! With `P = e^X e^Y e^Z`:
//!
//! * `tr e^X e^Y e^Z = det(1 + P)`
//! * `tr c_i^† c_i' e^X e^Y e^Z = D T_{i'i}`, `D = det(1 + P)`,
//!   `T = (e^{-Z} e^{-Y} e^{-X} + 1)^{-1} = P (1 + P)^{-1}`
//!
//! and five two-insertion variants (see [`TwoInsertKind`]). Factor order
//! is always preserved; the forms do not commute.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::matrix::{expm, identity, lu_logdet, CMatrix, LogDet, Lu};

/// The pair `(e^X, e^{-X})` for one quadratic form.
#[derive(Debug, Clone)]
pub struct ExpFactor {
    exp: CMatrix,
    exp_inv: CMatrix,
}

impl ExpFactor {
    pub fn from_generator(x: &CMatrix) -> Result<Self> {
        Ok(ExpFactor { exp: expm(x)?, exp_inv: expm(&x.mapv(|z| -z))? })
    }

    pub fn from_exponentials(exp: CMatrix, exp_inv: CMatrix) -> Result<Self> {
        let (r, c) = exp.dim();
        if r != c {
            return Err(Error::NotSquare { rows: r, cols: c });
        }
        if exp_inv.dim() != (r, r) {
            return Err(Error::DimensionMismatch { expected: r, found: exp_inv.nrows() });
        }
        Ok(ExpFactor { exp, exp_inv })
    }

    pub fn identity(n: usize) -> Self {
        ExpFactor { exp: identity(n), exp_inv: identity(n) }
    }

    pub fn exp(&self) -> &CMatrix {
        &self.exp
    }

    pub fn exp_inv(&self) -> &CMatrix {
        &self.exp_inv
    }

    pub fn dim(&self) -> usize {
        self.exp.nrows()
    }
}

/// Ordered product `e^{X_1} e^{X_2} ... e^{X_n}`.
#[derive(Debug, Clone)]
pub struct QuadraticFormChain {
    factors: Vec<ExpFactor>,
}

impl QuadraticFormChain {
    pub fn new(factors: Vec<ExpFactor>) -> Result<Self> {
        let first = factors
            .first()
            .ok_or(Error::InvalidSpec { field: "chain", reason: "empty quadratic form chain".into() })?;
        let n = first.dim();
        if let Some(bad) = factors.iter().find(|f| f.dim() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: bad.dim() });
        }
        Ok(QuadraticFormChain { factors })
    }

    pub fn from_generators(generators: &[CMatrix]) -> Result<Self> {
        Self::new(generators.iter().map(ExpFactor::from_generator).collect::<Result<_>>()?)
    }

    pub fn dim(&self) -> usize {
        self.factors[0].dim()
    }

    pub fn factors(&self) -> &[ExpFactor] {
        &self.factors
    }

    /// `e^{X_1} ... e^{X_n}`, multiplied left to right.
    pub fn product(&self) -> CMatrix {
        let mut p = self.factors[0].exp.clone();
        for f in &self.factors[1..] {
            p = p.dot(&f.exp);
        }
        p
    }
}

/// `D` and `T` of a chain, sharing one factorization of `1 + P`.
#[derive(Debug, Clone)]
pub struct DetAndPropagator {
    pub det: LogDet,
    /// `T = P (1 + P)^{-1}`
    pub t: CMatrix,
}

pub fn det_and_propagator(chain: &QuadraticFormChain) -> Result<DetAndPropagator> {
    let p = chain.product();
    let one_plus = &identity(chain.dim()) + &p;
    let (lu, det) = lu_logdet(&one_plus)?;
    // (1 + P)^{-1} P == P (1 + P)^{-1}
    let t = lu.solve(&p)?;
    Ok(DetAndPropagator { det, t })
}

/// `tr prod_k e^{X_k} = det(1 + prod_k e^{X_k})`.
pub fn bss_trace(chain: &QuadraticFormChain) -> Result<LogDet> {
    let p = chain.product();
    let (_, det) = lu_logdet(&(&identity(chain.dim()) + &p))?;
    Ok(det)
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(Error::DimensionMismatch { expected: n, found: i });
    }
    Ok(())
}

/// `tr c_i^† c_i' e^{X_1} ... e^{X_n} = D T_{i'i}`.
pub fn trace_one_insert(i: usize, ip: usize, chain: &QuadraticFormChain) -> Result<C64> {
    check_index(i, chain.dim())?;
    check_index(ip, chain.dim())?;
    let dt = det_and_propagator(chain)?;
    Ok(dt.det.value() * dt.t[[ip, i]])
}

/// `tr c_i^† c_i' e^{X_1} ... e^{X_n}` by finite differences of plain traces.
///
/// For `i = i'`, `e^{alpha n_i} = 1 + (e^alpha - 1) n_i`; for `i != i'`,
/// `(c_i^† c_i')^2 = 0` so `e^{alpha c_i^† c_i'} = 1 + alpha c_i^† c_i'`.
/// Either way the insertion is a difference of two determinants, exact for
/// every `alpha != 0`.
pub fn trace_one_insert_alpha(i: usize, ip: usize, chain: &QuadraticFormChain, alpha: f64) -> Result<C64> {
    let n = chain.dim();
    check_index(i, n)?;
    check_index(ip, n)?;
    if alpha == 0.0 {
        return Err(Error::InvalidSpec { field: "alpha", reason: "must be nonzero".into() });
    }
    let mut exp = identity(n);
    let mut exp_inv = identity(n);
    let scale = if i == ip {
        exp[[i, i]] = C64::new(alpha.exp(), 0.0);
        exp_inv[[i, i]] = C64::new((-alpha).exp(), 0.0);
        alpha.exp() - 1.0
    } else {
        exp[[i, ip]] = C64::new(alpha, 0.0);
        exp_inv[[i, ip]] = C64::new(-alpha, 0.0);
        alpha
    };
    let mut factors = vec![ExpFactor::from_exponentials(exp, exp_inv)?];
    factors.extend(chain.factors().iter().cloned());
    let with = bss_trace(&QuadraticFormChain::new(factors)?)?.value();
    let without = bss_trace(chain)?.value();
    Ok((with - without) / scale)
}

/// Operator pattern of a two-insertion trace. With `i, i', j, j'`:
///
/// | kind        | operator under the trace                          |
/// |-------------|---------------------------------------------------|
/// | `Adjacent`  | `c_i^† c_i' e^X c_j^† c_j' e^Y e^Z`               |
/// | `SplitMp`   | `c_i^† c_i' e^X c_j^† e^Y c_j' e^Z`               |
/// | `SplitPp`   | `c_i c_i'^† e^X c_j^† e^Y c_j' e^Z`               |
/// | `SplitMm`   | `c_i^† c_i' e^X c_j e^Y c_j'^† e^Z`               |
/// | `SplitPm`   | `c_i c_i'^† e^X c_j e^Y c_j'^† e^Z`               |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TwoInsertKind {
    Adjacent,
    SplitMp,
    SplitPp,
    SplitMm,
    SplitPm,
}

impl TwoInsertKind {
    pub const ALL: [TwoInsertKind; 5] = [
        TwoInsertKind::Adjacent,
        TwoInsertKind::SplitMp,
        TwoInsertKind::SplitPp,
        TwoInsertKind::SplitMm,
        TwoInsertKind::SplitPm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TwoInsertKind::Adjacent => "adjacent",
            TwoInsertKind::SplitMp => "split_mp",
            TwoInsertKind::SplitPp => "split_pp",
            TwoInsertKind::SplitMm => "split_mm",
            TwoInsertKind::SplitPm => "split_pm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsertIndices {
    pub i: usize,
    pub ip: usize,
    pub j: usize,
    pub jp: usize,
}

impl InsertIndices {
    pub fn diagonal(i: usize, j: usize) -> Self {
        InsertIndices { i, ip: i, j, jp: j }
    }
}

fn delta(a: usize, b: usize) -> C64 {
    if a == b {
        C64::new(1.0, 0.0)
    } else {
        C64::new(0.0, 0.0)
    }
}

fn row_dot_col(a: &CMatrix, r: usize, b: &CMatrix, c: usize) -> C64 {
    a.row(r).iter().zip(b.column(c).iter()).map(|(x, y)| x * y).sum()
}

/// Two-insertion trace for the chain `X, Y, Z`.
pub fn trace_two_insert(
    kind: TwoInsertKind,
    idx: InsertIndices,
    x: &ExpFactor,
    y: &ExpFactor,
    z: &ExpFactor,
) -> Result<C64> {
    let chain = QuadraticFormChain::new(vec![x.clone(), y.clone(), z.clone()])?;
    let n = chain.dim();
    for k in [idx.i, idx.ip, idx.j, idx.jp] {
        check_index(k, n)?;
    }
    let DetAndPropagator { det, t } = det_and_propagator(&chain)?;
    let InsertIndices { i, ip, j, jp } = idx;

    // Shared building blocks. Only the rows and columns actually needed are
    // contracted, except for e^{-X} T which several kinds reuse.
    let xi_t = x.exp_inv.dot(&t); // e^{-X} T
    let bracket = match kind {
        TwoInsertKind::Adjacent => {
            let a = row_dot_col(&xi_t, jp, &x.exp, j); // (e^{-X} T e^X)_{j'j}
            let t_zy = t.dot(&z.exp_inv).dot(&y.exp_inv); // T e^{-Z} e^{-Y}
            a * t[[ip, i]] + t_zy[[ip, j]] * xi_t[[jp, i]]
        }
        TwoInsertKind::SplitMp | TwoInsertKind::SplitPp => {
            let yx_t = y.exp_inv.dot(&xi_t); // e^{-Y} e^{-X} T
            let a = row_dot_col(&yx_t, jp, &x.exp, j); // (e^{-Y} e^{-X} T e^X)_{j'j}
            let t_zy = t.dot(&z.exp_inv).dot(&y.exp_inv);
            if kind == TwoInsertKind::SplitMp {
                a * t[[ip, i]] + t_zy[[ip, j]] * yx_t[[jp, i]]
            } else {
                a * (delta(i, ip) - t[[i, ip]]) - t_zy[[i, j]] * yx_t[[jp, ip]]
            }
        }
        TwoInsertKind::SplitMm | TwoInsertKind::SplitPm => {
            let xtx_y = xi_t.dot(&x.exp).dot(&y.exp); // e^{-X} T e^X e^Y
            let a = y.exp[[j, jp]] - xtx_y[[j, jp]];
            let t_z = t.dot(&z.exp_inv); // T e^{-Z}
            if kind == TwoInsertKind::SplitMm {
                a * t[[ip, i]] - t_z[[ip, jp]] * xi_t[[j, i]]
            } else {
                a * (delta(i, ip) - t[[i, ip]]) + t_z[[i, jp]] * xi_t[[j, ip]]
            }
        }
    };
    Ok(det.value() * bracket)
}

/// Rank-one determinant and inverse updates.
pub mod lemmas {
    use super::*;
    use ndarray::{Array1, Array2};

    fn outer(psi: &Array1<C64>, phi: &Array1<C64>) -> CMatrix {
        Array2::from_shape_fn((psi.len(), phi.len()), |(r, c)| psi[r] * phi[c].conj())
    }

    /// `det(A + |psi><phi|) = det(A) (1 + <phi| A^{-1} |psi>)`.
    pub fn sylvester_det(a: &CMatrix, psi: &Array1<C64>, phi: &Array1<C64>) -> Result<LogDet> {
        let (lu, det) = lu_logdet(a)?;
        let x = lu.solve_vec(psi)?;
        let s: C64 = phi.iter().zip(x.iter()).map(|(p, v)| p.conj() * v).sum();
        Ok(det.scale(C64::new(1.0, 0.0) + s))
    }

    /// `(A + |psi><phi|)^{-1} = A^{-1} - A^{-1}|psi><phi|A^{-1} / (1 + <phi|A^{-1}|psi>)`.
    pub fn sherman_morrison(a: &CMatrix, psi: &Array1<C64>, phi: &Array1<C64>) -> Result<CMatrix> {
        let lu = Lu::new(a)?;
        let a_inv = lu.solve(&identity(a.nrows()))?;
        let a_inv_psi = a_inv.dot(psi);
        let phi_a_inv: Array1<C64> = a_inv.t().dot(&phi.mapv(|z| z.conj()));
        let denom = C64::new(1.0, 0.0) + phi.iter().zip(a_inv_psi.iter()).map(|(p, v)| p.conj() * v).sum::<C64>();
        let update = Array2::from_shape_fn(a.dim(), |(r, c)| a_inv_psi[r] * phi_a_inv[c] / denom);
        Ok(a_inv - update)
    }

    /// `A + |psi><phi|`, for callers comparing against the direct route.
    pub fn rank_one_update(a: &CMatrix, psi: &Array1<C64>, phi: &Array1<C64>) -> CMatrix {
        a + &outer(psi, phi)
    }
}
