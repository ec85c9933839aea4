//! Dense Lindblad superoperators on column-stacked density matrices:
//! `vec(A rho B) = (B^T ⊗ A) vec(rho)`.

use nalgebra::SVD;
use ndarray::linalg::kron;
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use super::fock::{trace_product, FockSpace, OracleLimit};
use crate::chain::{gaussian_exponent_factors, ChainSpec, Channel, GaussianState, Sign, StateKind};
use crate::error::{Error, Result};
use crate::matrix::{dagger, expm, identity, to_nalgebra, CMatrix};

/// Jump weights `tr J_q(rho)` below this are treated as impossible jumps.
pub const MIN_JUMP_WEIGHT: f64 = 1e-14;
const NULL_SPACE_GAP: f64 = 1e-10;

pub fn vec_of(rho: &CMatrix) -> Array1<C64> {
    let n = rho.nrows();
    Array1::from_shape_fn(n * n, |k| rho[[k % n, k / n]])
}

pub fn unvec(v: &Array1<C64>) -> CMatrix {
    let n = (v.len() as f64).sqrt().round() as usize;
    Array2::from_shape_fn((n, n), |(i, j)| v[j * n + i])
}

fn trace_of_vec(v: &Array1<C64>, n: usize) -> C64 {
    (0..n).map(|i| v[i * n + i]).sum()
}

/// `rho -> a rho b`.
fn sandwich(a: &CMatrix, b: &CMatrix) -> CMatrix {
    kron(&b.t().to_owned(), a)
}

#[derive(Debug, Clone)]
pub struct FockOracle {
    space: FockSpace,
    hamiltonian: CMatrix,
    /// Hilbert-space jump operators `sqrt(rate) c` or `sqrt(rate) c^†`.
    jump_ops: [CMatrix; 4],
    full: CMatrix,
    no_jump: CMatrix,
    jumps: [CMatrix; 4],
}

impl FockOracle {
    pub fn build(spec: &ChainSpec, limit: OracleLimit) -> Result<Self> {
        let space = FockSpace::new(spec.len(), limit)?;
        let hamiltonian = space.quadratic_form(spec.h())?;
        let jump_ops = Channel::ALL.map(|ch| {
            let site = spec.site_index(ch.site);
            let op = match ch.sign {
                Sign::Minus => space.c(site).clone(),
                Sign::Plus => space.c_dag(site),
            };
            op.mapv(|z| z * spec.rate(ch).sqrt())
        });

        let d = space.dim();
        let eye = identity(d);
        let minus_i = C64::new(0.0, -1.0);
        let mut full = (sandwich(&hamiltonian, &eye) - sandwich(&eye, &hamiltonian)).mapv(|z| z * minus_i);
        let jumps = jump_ops.clone().map(|j| sandwich(&j, &dagger(&j)));
        for (j, jump) in jump_ops.iter().zip(&jumps) {
            let jdj = dagger(j).dot(j);
            full = full + jump - (sandwich(&jdj, &eye) + sandwich(&eye, &jdj)).mapv(|z| z * 0.5);
        }
        let mut no_jump = full.clone();
        for jump in &jumps {
            no_jump -= jump;
        }
        Ok(FockOracle { space, hamiltonian, jump_ops, full, no_jump, jumps })
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    pub fn hamiltonian(&self) -> &CMatrix {
        &self.hamiltonian
    }

    pub fn liouvillian(&self) -> &CMatrix {
        &self.full
    }

    pub fn no_jump(&self) -> &CMatrix {
        &self.no_jump
    }

    pub fn jump(&self, ch: Channel) -> &CMatrix {
        &self.jumps[ch.index()]
    }

    /// `H_e = H - (i/2) sum_k J_k^† J_k`.
    pub fn effective_hamiltonian(&self) -> CMatrix {
        let mut he = self.hamiltonian.clone();
        for j in &self.jump_ops {
            he = he - dagger(j).dot(j).mapv(|z| z * C64::new(0.0, 0.5));
        }
        he
    }

    /// `rho -> -i (H_e rho - rho H_e^†)`, built independently of the
    /// jump-subtraction route.
    pub fn no_jump_from_effective_hamiltonian(&self) -> CMatrix {
        let he = self.effective_hamiltonian();
        let eye = identity(self.space.dim());
        (sandwich(&he, &eye) - sandwich(&eye, &dagger(&he))).mapv(|z| z * C64::new(0.0, -1.0))
    }

    /// `tr J_q(rho)`.
    pub fn jump_weight(&self, q: Channel, rho: &CMatrix) -> f64 {
        let j = &self.jump_ops[q.index()];
        trace_product(rho, &dagger(j).dot(j)).re
    }

    /// No-jump propagator `e^{L_0 t}`.
    pub fn no_jump_propagator(&self, t: f64) -> Result<CMatrix> {
        expm(&self.no_jump.mapv(|z| z * t))
    }

    /// `P(t, k|q) = tr J_k e^{L_0 t} J_q(rho) / tr J_q(rho)`.
    pub fn wtd(&self, t: f64, k: Channel, q: Channel, rho: &CMatrix) -> Result<f64> {
        let prop = self.no_jump_propagator(t)?;
        self.wtd_with(&prop, k, q, rho)
    }

    fn wtd_with(&self, prop: &CMatrix, k: Channel, q: Channel, rho: &CMatrix) -> Result<f64> {
        let weight = self.jump_weight(q, rho);
        if weight <= MIN_JUMP_WEIGHT {
            return Err(Error::VanishingDenominator { channel: q, weight });
        }
        let v = self.jumps[q.index()].dot(&vec_of(rho));
        let v = prop.dot(&v);
        let v = self.jumps[k.index()].dot(&v);
        Ok(trace_of_vec(&v, self.space.dim()).re / weight)
    }

    /// All sixteen densities at `t`, indexed `[k][q]`; `None` where the
    /// conditioning jump is impossible from `rho`.
    pub fn wtd_table(&self, t: f64, rho: &CMatrix) -> Result<[[Option<f64>; 4]; 4]> {
        let prop = self.no_jump_propagator(t)?;
        let mut out = [[None; 4]; 4];
        for q in Channel::ALL {
            if self.jump_weight(q, rho) <= MIN_JUMP_WEIGHT {
                continue;
            }
            for k in Channel::ALL {
                out[k.index()][q.index()] = Some(self.wtd_with(&prop, k, q, rho)?);
            }
        }
        Ok(out)
    }

    /// Unique fixed point of the full Liouvillian.
    pub fn steady_state(&self) -> Result<CMatrix> {
        let d = self.space.dim();
        let svd = SVD::new(to_nalgebra(&self.full), false, true);
        let v_t = svd.v_t.as_ref().ok_or(Error::EigenFailure { dim: d * d })?;
        let sv = &svd.singular_values;
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]));
        let sigma2 = sv[order[1]];
        if sigma2 <= NULL_SPACE_GAP {
            return Err(Error::DegenerateSteadyState { sigma: sigma2 });
        }
        // v_t holds V^H, so the right singular vector is the conjugated row.
        let null = Array1::from_shape_fn(d * d, |k| v_t[(order[0], k)].conj());
        let rho = unvec(&null);
        let tr: C64 = (0..d).map(|i| rho[[i, i]]).sum();
        let rho = rho.mapv(|z| z / tr);
        Ok((&rho + &dagger(&rho)).mapv(|z| z * 0.5))
    }

    /// Density matrix of a Gaussian state, `e^{-sum M_ij c_i^† c_j} / Z`.
    pub fn gaussian_density(&self, state: &GaussianState) -> Result<CMatrix> {
        if state.len() != self.space.len() {
            return Err(Error::DimensionMismatch { expected: self.space.len(), found: state.len() });
        }
        if state.kind() == StateKind::Vacuum {
            return Ok(self.space.vacuum_density());
        }
        let factors = gaussian_exponent_factors(state)?;
        let rho = self.space.second_quantize(&factors.eminus)?;
        let d = rho.nrows();
        let tr: C64 = (0..d).map(|i| rho[[i, i]]).sum();
        Ok(rho.mapv(|z| z / tr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{steady_state, vacuum_state};
    use crate::matrix::{eig, hermitian_eigen, max_abs, test_util::random_hermitian};

    fn section_v(len: usize) -> ChainSpec {
        ChainSpec::tight_binding(len, 1.0, 1.0, 0.1, 0.1, 1.0, 0.0).unwrap()
    }

    fn generic(len: usize) -> ChainSpec {
        ChainSpec::tight_binding(len, 0.7, 1.0, 0.1, 0.15, 0.8, 0.3).unwrap()
    }

    #[test]
    fn splitting_is_exact() {
        let o = FockOracle::build(&generic(3), OracleLimit::Standard).unwrap();
        let mut sum = o.no_jump().clone();
        for ch in Channel::ALL {
            sum += o.jump(ch);
        }
        assert!(max_abs(&(sum - o.liouvillian())) <= 1e-13);
    }

    #[test]
    fn no_jump_dual_construction() {
        for spec in [section_v(2), generic(3)] {
            let o = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
            assert!(max_abs(&(o.no_jump() - o.no_jump_from_effective_hamiltonian())) <= 1e-12);
        }
    }

    #[test]
    fn trace_preservation() {
        let o = FockOracle::build(&generic(3), OracleLimit::Standard).unwrap();
        let d = o.space().dim();
        let id = vec_of(&identity(d)).mapv(|z| z.conj());
        let left = o.liouvillian().t().dot(&id);
        assert!(left.iter().all(|z| z.norm() <= 1e-10));
    }

    #[test]
    fn closed_chain_has_imaginary_spectrum() {
        let spec = ChainSpec::tight_binding(2, 1.0, 1.0, 0.0, 0.0, 0.5, 0.5).unwrap();
        let o = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
        assert!(eig(o.liouvillian()).unwrap().values.iter().all(|z| z.re.abs() <= 1e-10));
    }

    #[test]
    fn equilibrium_steady_state_is_product_thermal() {
        let spec = ChainSpec::tight_binding(3, 1.0, 1.0, 0.2, 0.3, 0.35, 0.35).unwrap();
        let o = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
        let rho = o.steady_state().unwrap();
        let c = o.space().covariance(&rho);
        assert!(max_abs(&(c - identity(3).mapv(|z| z * 0.35))) < 1e-8);
    }

    #[test]
    fn steady_state_matches_lyapunov_covariance() {
        for spec in [section_v(2), generic(3)] {
            let o = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
            let rho = o.steady_state().unwrap();
            let (vals, _) = hermitian_eigen(&rho).unwrap();
            assert!(vals[0] >= -1e-12);
            let c = o.space().covariance(&rho);
            let css = steady_state(&spec).unwrap();
            assert!(max_abs(&(c - css.covariance())) < 1e-8);
        }
    }

    #[test]
    fn no_jump_evolution_loses_norm() {
        let o = FockOracle::build(&generic(2), OracleLimit::Standard).unwrap();
        let rho = o.steady_state().unwrap();
        for t in [0.0, 1.0, 10.0, 100.0] {
            let v = o.no_jump_propagator(t).unwrap().dot(&vec_of(&rho));
            let tr = trace_of_vec(&v, o.space().dim()).re;
            assert!((-1e-10..=1.0 + 1e-10).contains(&tr), "t={t}: {tr}");
        }
    }

    #[test]
    fn vacuum_extraction_is_impossible() {
        let o = FockOracle::build(&section_v(2), OracleLimit::Standard).unwrap();
        let rho = o.space().vacuum_density();
        let r = o.wtd(1.0, Channel::FIRST_PLUS, Channel::FIRST_MINUS, &rho);
        assert!(matches!(r, Err(Error::VanishingDenominator { .. })));
        // a second injection right after the first is blocked at t = 0
        let p = o.wtd(0.0, Channel::FIRST_PLUS, Channel::FIRST_PLUS, &rho).unwrap();
        assert!(p.abs() < 1e-15);
    }

    #[test]
    fn gaussian_density_roundtrip() {
        let o = FockOracle::build(&section_v(2), OracleLimit::Standard).unwrap();
        let half = GaussianState::custom(identity(2).mapv(|z| z * 0.5)).unwrap();
        let rho = o.gaussian_density(&half).unwrap();
        assert!(max_abs(&(rho - identity(4).mapv(|z| z * 0.25))) < 1e-14);

        // random valid covariance: eigenvalues squeezed into (0.1, 0.9)
        let (_, u) = hermitian_eigen(&random_hermitian(2, 9)).unwrap();
        let c = u.dot(&crate::matrix::from_real_diag(&[0.2, 0.7])).dot(&dagger(&u));
        let st = GaussianState::custom(c.clone()).unwrap();
        let rho = o.gaussian_density(&st).unwrap();
        assert!(max_abs(&(o.space().covariance(&rho) - c)) < 1e-10);

        let vac = o.gaussian_density(&vacuum_state(2).unwrap()).unwrap();
        assert_eq!(vac[[0, 0]], C64::new(1.0, 0.0));
        assert!(max_abs(&o.space().covariance(&vac)) == 0.0);
    }

    #[test]
    fn oracle_normalization_by_riemann_sum() {
        // Sum_k P(t,k|q) integrated with the trapezoid rule on a fine grid;
        // an independent check that the oracle densities are normalized.
        let spec = ChainSpec::tight_binding(2, 1.0, 1.0, 0.5, 0.5, 1.0, 0.0).unwrap();
        let o = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
        let rho = o.steady_state().unwrap();
        let dt = 0.01;
        let step = o.no_jump_propagator(dt).unwrap();
        let q = Channel::FIRST_PLUS;
        let w = o.jump_weight(q, &rho);
        let mut v = o.jump(q).dot(&vec_of(&rho)).mapv(|z| z / w);
        let dens = |v: &Array1<C64>| -> f64 {
            Channel::ALL.iter().map(|&k| trace_of_vec(&o.jump(k).dot(v), 4).re).sum()
        };
        let mut total = 0.5 * dens(&v) * dt;
        for _ in 0..8000 {
            v = step.dot(&v);
            total += dens(&v) * dt;
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }
}
