//! Matrix exponential by scaling and squaring with diagonal Padé
//! approximants (Higham 2005, "The scaling and squaring method for the
//! matrix exponential revisited").

use num_complex::Complex64 as C64;

use super::{ensure_finite, ensure_square, identity, norm1, CMatrix, Lu};
use crate::error::{Error, Result};

// Largest 1-norms for which the [m/m] approximant meets unit roundoff in
// double precision.
const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.53939833006323e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn scaled(a: &CMatrix, s: f64) -> CMatrix {
    a.mapv(|z| z * s)
}

fn add_scaled(acc: &mut CMatrix, a: &CMatrix, s: f64) {
    acc.zip_mut_with(a, |x, y| *x += y * s);
}

/// `e^a`.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    let n = ensure_square(a)?;
    ensure_finite(a)?;
    if n == 0 {
        return Ok(a.clone());
    }
    let norm = norm1(a);
    let eye = identity(n);

    for (theta, coeffs) in [
        (THETA_3, &PADE_3[..]),
        (THETA_5, &PADE_5[..]),
        (THETA_7, &PADE_7[..]),
        (THETA_9, &PADE_9[..]),
    ] {
        if norm <= theta {
            return low_order(a, &eye, coeffs);
        }
    }

    let squarings = if norm > THETA_13 { (norm / THETA_13).log2().ceil().max(0.0) as u32 } else { 0 };
    let a = scaled(a, 0.5f64.powi(squarings as i32));
    let b = &PADE_13;
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);

    let mut inner_u = scaled(&a6, b[13]);
    add_scaled(&mut inner_u, &a4, b[11]);
    add_scaled(&mut inner_u, &a2, b[9]);
    let mut u = a6.dot(&inner_u);
    add_scaled(&mut u, &a6, b[7]);
    add_scaled(&mut u, &a4, b[5]);
    add_scaled(&mut u, &a2, b[3]);
    add_scaled(&mut u, &eye, b[1]);
    let u = a.dot(&u);

    let mut inner_v = scaled(&a6, b[12]);
    add_scaled(&mut inner_v, &a4, b[10]);
    add_scaled(&mut inner_v, &a2, b[8]);
    let mut v = a6.dot(&inner_v);
    add_scaled(&mut v, &a6, b[6]);
    add_scaled(&mut v, &a4, b[4]);
    add_scaled(&mut v, &a2, b[2]);
    add_scaled(&mut v, &eye, b[0]);

    let mut r = pade_quotient(&u, &v)?;
    for _ in 0..squarings {
        r = r.dot(&r);
    }
    if r.iter().any(|z: &C64| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::ExpmOverflow { norm, squarings });
    }
    Ok(r)
}

fn low_order(a: &CMatrix, eye: &CMatrix, b: &[f64]) -> Result<CMatrix> {
    let a2 = a.dot(a);
    let mut odd = scaled(eye, b[1]);
    let mut even = scaled(eye, b[0]);
    let mut power = eye.clone();
    let m = b.len() - 1;
    let mut k = 2;
    while k <= m {
        power = power.dot(&a2);
        add_scaled(&mut even, &power, b[k]);
        if k < m {
            add_scaled(&mut odd, &power, b[k + 1]);
        }
        k += 2;
    }
    let u = a.dot(&odd);
    pade_quotient(&u, &even)
}

/// `(V - U)^{-1} (V + U)`.
fn pade_quotient(u: &CMatrix, v: &CMatrix) -> Result<CMatrix> {
    let p = v + u;
    let q = v - u;
    Lu::new(&q)?.solve(&p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{dagger, max_abs, test_util::random_matrix};
    use ndarray::{array, Array2};

    #[test]
    fn zero_gives_identity() {
        let e = expm(&Array2::zeros((3, 3))).unwrap();
        assert!(max_abs(&(e - identity(3))) == 0.0);
    }

    #[test]
    fn diagonal_case() {
        let a = array![[C64::new(1.3, 0.4), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(-7.0, 2.0)]];
        let e = expm(&a).unwrap();
        assert!((e[[0, 0]] - a[[0, 0]].exp()).norm() < 1e-14 * a[[0, 0]].exp().norm());
        assert!((e[[1, 1]] - a[[1, 1]].exp()).norm() < 1e-13 * a[[1, 1]].exp().norm());
        assert!(e[[0, 1]].norm() == 0.0);
    }

    #[test]
    fn nilpotent_is_exact() {
        let a = array![[C64::new(0.0, 0.0), C64::new(3.0, 0.0)], [C64::new(0.0, 0.0), C64::new(0.0, 0.0)]];
        let e = expm(&a).unwrap();
        assert!((e[[0, 1]] - C64::new(3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn inverse_pair_for_moderate_norms() {
        // Target 1-norms straddle every Padé order and the squaring branch.
        for (seed, target) in [(1, 0.01), (2, 0.2), (3, 0.9), (4, 2.0), (5, 5.0)] {
            let a = random_matrix(6, 1.0, seed);
            let a = a.mapv(|z| z * (target / norm1(&a)));
            let prod = expm(&a).unwrap().dot(&expm(&a.mapv(|z| -z)).unwrap());
            assert!(max_abs(&(prod - identity(6))) < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn adjoint_commutes_with_exponential() {
        let a = random_matrix(5, 1.5, 11);
        let lhs = expm(&dagger(&a)).unwrap();
        let rhs = dagger(&expm(&a).unwrap());
        assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn rotation_generator() {
        // e^{[[0, -w],[w, 0]]} is a rotation by w.
        let w = 40.0;
        let a = array![[C64::new(0.0, 0.0), C64::new(-w, 0.0)], [C64::new(w, 0.0), C64::new(0.0, 0.0)]];
        let e = expm(&a).unwrap();
        assert!((e[[0, 0]].re - w.cos()).abs() < 1e-12);
        assert!((e[[1, 0]].re - w.sin()).abs() < 1e-12);
    }

    #[test]
    fn overflow_is_reported() {
        let a = array![[C64::new(1000.0, 0.0)]];
        assert!(matches!(expm(&a), Err(Error::ExpmOverflow { .. })));
    }

    #[test]
    fn non_square_rejected() {
        let a: CMatrix = Array2::zeros((2, 3));
        assert!(matches!(expm(&a), Err(Error::NotSquare { .. })));
    }
}
