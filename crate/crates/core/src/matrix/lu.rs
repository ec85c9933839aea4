use std::ops::{Div, Mul};

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use super::{ensure_square, CMatrix};
use crate::error::{Error, Result};

/// A determinant carried as `exp(log_abs) * phase`.
///
/// Determinants of `1 + e^X e^Y e^Z`-type matrices grow or shrink
/// exponentially with chain length and time, so they are only ever
/// combined in this form and exponentiated once at the end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub log_abs: f64,
    pub phase: C64,
}

impl LogDet {
    pub const ONE: LogDet = LogDet { log_abs: 0.0, phase: C64 { re: 1.0, im: 0.0 } };

    pub fn from_value(z: C64) -> Self {
        let r = z.norm();
        let phase = if r > 0.0 { z / r } else { C64::new(1.0, 0.0) };
        LogDet { log_abs: r.ln(), phase }
    }

    pub fn value(&self) -> C64 {
        self.phase * self.log_abs.exp()
    }

    pub fn inv(&self) -> Self {
        LogDet { log_abs: -self.log_abs, phase: self.phase.conj() }
    }

    /// Multiply by a plain scalar without leaving log space.
    pub fn scale(&self, z: C64) -> Self {
        *self * LogDet::from_value(z)
    }
}

impl Mul for LogDet {
    type Output = LogDet;
    fn mul(self, rhs: LogDet) -> LogDet {
        let p = self.phase * rhs.phase;
        LogDet { log_abs: self.log_abs + rhs.log_abs, phase: p / p.norm() }
    }
}

impl Div for LogDet {
    type Output = LogDet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: LogDet) -> LogDet {
        self * rhs.inv()
    }
}

/// Partial-pivoting LU factorization `P A = L U`, with `L` unit lower
/// triangular. Row `i` of `P A` is row `perm[i]` of `A`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
    swaps: usize,
}

/// Factor `a` and return its determinant in log form.
pub fn lu_logdet(a: &CMatrix) -> Result<(Lu, LogDet)> {
    let lu = Lu::new(a)?;
    let det = lu.logdet();
    Ok((lu, det))
}

impl Lu {
    pub fn new(a: &CMatrix) -> Result<Self> {
        let n = ensure_square(a)?;
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut swaps = 0;
        for k in 0..n {
            let mut p = k;
            let mut best = lu[[k, k]].norm_sqr();
            for r in (k + 1)..n {
                let v = lu[[r, k]].norm_sqr();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return Err(Error::Singular { pivot: k });
            }
            if p != k {
                for c in 0..n {
                    lu.swap([k, c], [p, c]);
                }
                perm.swap(k, p);
                swaps += 1;
            }
            let pivot = lu[[k, k]];
            for r in (k + 1)..n {
                let f = lu[[r, k]] / pivot;
                lu[[r, k]] = f;
                if f != C64::new(0.0, 0.0) {
                    for c in (k + 1)..n {
                        let u = lu[[k, c]];
                        lu[[r, c]] -= f * u;
                    }
                }
            }
        }
        Ok(Lu { lu, perm, swaps })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn logdet(&self) -> LogDet {
        let mut det = LogDet::ONE;
        for k in 0..self.dim() {
            det = det * LogDet::from_value(self.lu[[k, k]]);
        }
        if self.swaps % 2 == 1 {
            det.phase = -det.phase;
        }
        det
    }

    /// Solve `A X = B`.
    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, found: b.nrows() });
        }
        let mut x = Array2::zeros(b.raw_dim());
        for i in 0..n {
            x.row_mut(i).assign(&b.row(self.perm[i]));
        }
        let m = b.ncols();
        for i in 0..n {
            for k in 0..i {
                let l = self.lu[[i, k]];
                if l != C64::new(0.0, 0.0) {
                    for c in 0..m {
                        let v = x[[k, c]];
                        x[[i, c]] -= l * v;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let u = self.lu[[i, k]];
                if u != C64::new(0.0, 0.0) {
                    for c in 0..m {
                        let v = x[[k, c]];
                        x[[i, c]] -= u * v;
                    }
                }
            }
            let d = self.lu[[i, i]];
            for c in 0..m {
                x[[i, c]] /= d;
            }
        }
        Ok(x)
    }

    pub fn solve_vec(&self, b: &Array1<C64>) -> Result<Array1<C64>> {
        let n = self.dim();
        let col = b.clone().into_shape_with_order((n, 1)).map_err(|_| Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        })?;
        Ok(self.solve(&col)?.column(0).to_owned())
    }

    /// Solve `A^H x = b`.
    pub fn solve_adjoint_vec(&self, b: &Array1<C64>) -> Result<Array1<C64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: b.len() });
        }
        // U^H w = b
        let mut w = b.clone();
        for i in 0..n {
            let mut s = w[i];
            for k in 0..i {
                s -= self.lu[[k, i]].conj() * w[k];
            }
            w[i] = s / self.lu[[i, i]].conj();
        }
        // L^H v = w
        for i in (0..n).rev() {
            let mut s = w[i];
            for k in (i + 1)..n {
                s -= self.lu[[k, i]].conj() * w[k];
            }
            w[i] = s;
        }
        let mut x = Array1::zeros(n);
        for i in 0..n {
            x[self.perm[i]] = w[i];
        }
        Ok(x)
    }

    /// Estimate of `||A^{-1}||_1` (Hager–Higham power iteration on the
    /// dual norm). Never overestimates.
    pub fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        let mut x = Array1::from_elem(n, C64::new(1.0 / n as f64, 0.0));
        let mut est = 0.0f64;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let y = match self.solve_vec(&x) {
                Ok(y) => y,
                Err(_) => return f64::INFINITY,
            };
            let norm_y: f64 = y.iter().map(|v| v.norm()).sum();
            if !norm_y.is_finite() {
                return f64::INFINITY;
            }
            if norm_y <= est {
                break;
            }
            est = norm_y;
            let xi = y.mapv(|v| {
                let r = v.norm();
                if r > 0.0 {
                    v / r
                } else {
                    C64::new(1.0, 0.0)
                }
            });
            let z = match self.solve_adjoint_vec(&xi) {
                Ok(z) => z,
                Err(_) => return f64::INFINITY,
            };
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.norm()))
                .fold((0, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc });
            let ztx: f64 = z.iter().zip(x.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x.fill(C64::new(0.0, 0.0));
            x[j] = C64::new(1.0, 0.0);
        }
        est
    }

    /// 1-norm condition estimate `||A||_1 ||A^{-1}||_1` given `||A||_1`.
    pub fn condition_estimate(&self, norm1_a: f64) -> f64 {
        norm1_a * self.inverse_norm1_estimate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{identity, norm1, test_util::random_matrix};
    use approx::assert_relative_eq;
    use ndarray::array;

    /// Laplace expansion; exponential cost, only for tiny matrices.
    fn cofactor_det(a: &CMatrix) -> C64 {
        let n = a.nrows();
        if n == 1 {
            return a[[0, 0]];
        }
        let mut det = C64::new(0.0, 0.0);
        for c in 0..n {
            let minor = Array2::from_shape_fn((n - 1, n - 1), |(i, j)| {
                a[[i + 1, if j < c { j } else { j + 1 }]]
            });
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            det += a[[0, c]] * sign * cofactor_det(&minor);
        }
        det
    }

    #[test]
    fn identity_has_zero_log_det() {
        let (_, d) = lu_logdet(&identity(4)).unwrap();
        assert_eq!(d.log_abs, 0.0);
        assert_relative_eq!(d.phase.re, 1.0);
        assert_relative_eq!(d.phase.im, 0.0);
    }

    #[test]
    fn diagonal_det() {
        let a = array![[C64::new(2.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(3.0, 0.0)]];
        let (lu, d) = lu_logdet(&a).unwrap();
        assert_relative_eq!(d.log_abs, 6f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(d.phase.re, 1.0, epsilon = 1e-15);
        let x = lu.solve(&identity(2)).unwrap();
        assert_relative_eq!(x[[0, 0]].re, 0.5);
        let b = array![[C64::new(2.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(4.0, 0.0)]];
        let x = Lu::new(&b).unwrap().solve(&identity(2)).unwrap();
        assert_relative_eq!(x[[1, 1]].re, 0.25);
    }

    #[test]
    fn random_8x8_matches_cofactor_expansion() {
        for seed in 0..5 {
            let a = random_matrix(8, 1.0, seed);
            let (_, d) = lu_logdet(&a).unwrap();
            let brute = cofactor_det(&a);
            let got = d.value();
            assert!((got - brute).norm() <= 1e-10 * brute.norm(), "{got} vs {brute}");
            assert!((d.phase.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_roundtrip_and_residual() {
        let a = random_matrix(12, 1.0, 3) + identity(12).mapv(|v| v * 4.0);
        let b = random_matrix(12, 1.0, 4);
        let lu = Lu::new(&a).unwrap();
        let x = lu.solve(&b).unwrap();
        let r = a.dot(&x) - &b;
        assert!(norm1(&r) <= 1e-10 * norm1(&a) * norm1(&x));
        let eye = lu.solve(&a).unwrap();
        assert!(norm1(&(eye - identity(12))) < 1e-10);
    }

    #[test]
    fn adjoint_solve() {
        let a = random_matrix(6, 1.0, 9) + identity(6);
        let lu = Lu::new(&a).unwrap();
        let b = Array1::from_shape_fn(6, |i| C64::new(i as f64, 1.0));
        let x = lu.solve_adjoint_vec(&b).unwrap();
        let ah = a.t().mapv(|v| v.conj());
        let r = ah.dot(&x) - &b;
        assert!(r.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn singular_reports_pivot() {
        let a = array![[C64::new(1.0, 0.0), C64::new(2.0, 0.0)], [C64::new(2.0, 0.0), C64::new(4.0, 0.0)]];
        match Lu::new(&a) {
            Err(Error::Singular { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected singular, got {other:?}"),
        }
    }

    #[test]
    fn condition_estimate_is_sane() {
        let mut a = identity(5);
        a[[4, 4]] = C64::new(1e-6, 0.0);
        let lu = Lu::new(&a).unwrap();
        let c = lu.condition_estimate(norm1(&a));
        assert_relative_eq!(c, 1e6, max_relative = 1e-9);
    }
}
