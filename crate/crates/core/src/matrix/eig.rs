use nalgebra::{Schur, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex64 as C64;

use super::{ensure_finite, ensure_square, from_nalgebra, max_abs, norm1, to_nalgebra, CMatrix, Lu};
use crate::error::{Error, Result};

const SCHUR_MAX_ITER: usize = 0; // 0 = no limit, nalgebra convention

/// Right eigenpairs `A V = V diag(values)`, columns of `V` normalized to unit
/// 2-norm. `condition` is a 1-norm estimate of `cond(V)`; large values flag
/// a near-defective matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<C64>,
    pub vectors: CMatrix,
    pub condition: f64,
}

/// Complex Schur form `A = U T U^H` with `T` upper triangular.
pub(crate) fn schur(a: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    let n = ensure_square(a)?;
    ensure_finite(a)?;
    let s = Schur::try_new(to_nalgebra(a), f64::EPSILON, SCHUR_MAX_ITER).ok_or(Error::EigenFailure { dim: n })?;
    let (q, t) = s.unpack();
    let mut t = from_nalgebra(&t);
    // Complex Schur is triangular; wipe the roundoff below the diagonal.
    for i in 0..n {
        for j in 0..i {
            t[[i, j]] = C64::new(0.0, 0.0);
        }
    }
    Ok((from_nalgebra(&q), t))
}

/// Eigenvectors of an upper triangular matrix by back substitution.
pub(crate) fn triangular_eigenvectors(t: &CMatrix) -> CMatrix {
    let n = t.nrows();
    let small = (f64::EPSILON * max_abs(t)).max(f64::MIN_POSITIVE);
    let mut y = Array2::zeros((n, n));
    for k in 0..n {
        let lambda = t[[k, k]];
        y[[k, k]] = C64::new(1.0, 0.0);
        for m in (0..k).rev() {
            let mut s = C64::new(0.0, 0.0);
            for p in (m + 1)..=k {
                s += t[[m, p]] * y[[p, k]];
            }
            let mut d = t[[m, m]] - lambda;
            if d.norm() < small {
                d = C64::new(small, 0.0);
            }
            y[[m, k]] = -s / d;
        }
    }
    y
}

pub fn eig(a: &CMatrix) -> Result<Eigen> {
    let (q, t) = schur(a)?;
    let n = t.nrows();
    let values: Vec<C64> = (0..n).map(|k| t[[k, k]]).collect();
    let mut vectors = q.dot(&triangular_eigenvectors(&t));
    for mut col in vectors.columns_mut() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|z| z / norm);
        }
    }
    let condition = match Lu::new(&vectors) {
        Ok(lu) => lu.condition_estimate(norm1(&vectors)),
        Err(_) => f64::INFINITY,
    };
    Ok(Eigen { values, vectors, condition })
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian
/// matrix. Only the Hermitian part of `a` is used.
pub fn hermitian_eigen(a: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let n = ensure_square(a)?;
    ensure_finite(a)?;
    let herm = (a + &super::dagger(a)).mapv(|z| z * 0.5);
    let e = SymmetricEigen::try_new(to_nalgebra(&herm), f64::EPSILON, 0).ok_or(Error::EigenFailure { dim: n })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let values = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vecs = from_nalgebra(&e.eigenvectors);
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| vecs[[r, order[c]]]);
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{dagger, from_real_diag, test_util::*};

    fn reconstruction_residual(a: &CMatrix, e: &Eigen) -> f64 {
        let lambda = Array2::from_diag(&ndarray::Array1::from(e.values.clone()));
        max_abs(&(a.dot(&e.vectors) - e.vectors.dot(&lambda)))
    }

    #[test]
    fn diagonal_eigenvalues() {
        let e = eig(&from_real_diag(&[1.0, 2.0, 3.0])).unwrap();
        let mut re: Vec<f64> = e.values.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        for (got, want) in re.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-14);
        }
        assert!(e.values.iter().all(|z| z.im.abs() < 1e-14));
    }

    #[test]
    fn hermitian_spectrum_is_real() {
        let h = random_hermitian(7, 5);
        let e = eig(&h).unwrap();
        assert!(e.values.iter().all(|z| z.im.abs() < 1e-10));
        let (vals, vecs) = hermitian_eigen(&h).unwrap();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let back = vecs.dot(&from_real_diag(&vals)).dot(&dagger(&vecs));
        assert!(max_abs(&(back - h)) < 1e-12);
    }

    #[test]
    fn random_reconstruction() {
        for seed in 0..6 {
            let a = random_matrix(9, 1.0, 100 + seed);
            let e = eig(&a).unwrap();
            assert!(reconstruction_residual(&a, &e) <= 1e-9 * norm1(&a));
            assert!(e.condition.is_finite());
        }
    }

    #[test]
    fn schur_is_triangular_and_unitary() {
        let a = random_matrix(12, 1.0, 77);
        let (q, t) = schur(&a).unwrap();
        assert!(max_abs(&(q.dot(&t).dot(&dagger(&q)) - &a)) < 1e-12);
        assert!(max_abs(&(dagger(&q).dot(&q) - crate::matrix::identity(12))) < 1e-12);
    }

    #[test]
    fn jordan_block_flagged() {
        let mut a = from_real_diag(&[2.0, 2.0]);
        a[[0, 1]] = C64::new(1.0, 0.0);
        let e = eig(&a).unwrap();
        assert!(e.condition > 1e8, "condition {}", e.condition);
    }
}
