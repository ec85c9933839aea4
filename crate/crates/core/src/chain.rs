//! Physical model: hopping matrix, bath couplings, single-particle
//! drift/injection matrices, Gaussian states and the four jump channels.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{
    c, dagger, expm, from_real_diag, hermiticity_defect, hermitian_eigen, identity, lu_logdet, lyapunov_solve,
    max_abs, CMatrix, LogDet, Lu,
};

/// Default regularization for the vacuum, `C = lambda * I`.
pub const VACUUM_LAMBDA: f64 = 1e-10;
/// Occupation eigenvalues closer than this to 0 or 1 are clipped before
/// forming `e^{±M}`.
pub const EPS_OCC: f64 = 1e-12;
/// Tolerance on `0 <= eig(C) <= 1`.
pub const STATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Site {
    First,
    Last,
}

/// `Minus` removes a particle (dissipator `D[c]`), `Plus` injects one
/// (dissipator `D[c^†]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Minus,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Channel {
    pub site: Site,
    pub sign: Sign,
}

impl Channel {
    pub const FIRST_MINUS: Channel = Channel { site: Site::First, sign: Sign::Minus };
    pub const FIRST_PLUS: Channel = Channel { site: Site::First, sign: Sign::Plus };
    pub const LAST_MINUS: Channel = Channel { site: Site::Last, sign: Sign::Minus };
    pub const LAST_PLUS: Channel = Channel { site: Site::Last, sign: Sign::Plus };

    /// Canonical order `1-, 1+, L-, L+`, used for every 4x4 table.
    pub const ALL: [Channel; 4] = [Self::FIRST_MINUS, Self::FIRST_PLUS, Self::LAST_MINUS, Self::LAST_PLUS];

    pub fn index(self) -> usize {
        match (self.site, self.sign) {
            (Site::First, Sign::Minus) => 0,
            (Site::First, Sign::Plus) => 1,
            (Site::Last, Sign::Minus) => 2,
            (Site::Last, Sign::Plus) => 3,
        }
    }

    pub fn label(self) -> &'static str {
        ["1-", "1+", "L-", "L+"][self.index()]
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "1-" => Ok(Self::FIRST_MINUS),
            "1+" => Ok(Self::FIRST_PLUS),
            "L-" => Ok(Self::LAST_MINUS),
            "L+" => Ok(Self::LAST_PLUS),
            other => Err(format!("unknown channel `{other}` (expected one of 1-, 1+, L-, L+)")),
        }
    }
}

/// Chain of `L` sites with Hermitian hopping `h` and baths on sites 1 and L.
#[derive(Debug, Clone)]
pub struct ChainSpec {
    h: CMatrix,
    gamma1: f64,
    gamma_l: f64,
    f1: f64,
    f_l: f64,
}

impl ChainSpec {
    pub fn new(h: CMatrix, gamma1: f64, gamma_l: f64, f1: f64, f_l: f64) -> Result<Self> {
        let (rows, cols) = h.dim();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if rows < 2 {
            return Err(Error::InvalidSpec { field: "L", reason: format!("need at least 2 sites, got {rows}") });
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidSpec { field: "h", reason: "non-finite entry".into() });
        }
        let defect = hermiticity_defect(&h);
        if defect > 1e-12 * max_abs(&h).max(1.0) {
            return Err(Error::InvalidSpec { field: "h", reason: format!("not Hermitian (defect {defect:.3e})") });
        }
        for (field, g) in [("gamma1", gamma1), ("gammaL", gamma_l)] {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::InvalidSpec { field, reason: format!("rate must be finite and >= 0, got {g}") });
            }
        }
        for (field, f) in [("f1", f1), ("fL", f_l)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidSpec { field, reason: format!("Fermi factor must lie in [0, 1], got {f}") });
            }
        }
        let h = (&h + &dagger(&h)).mapv(|z| z * 0.5);
        Ok(ChainSpec { h, gamma1, gamma_l, f1, f_l })
    }

    pub fn tight_binding(len: usize, v: f64, j: f64, gamma1: f64, gamma_l: f64, f1: f64, f_l: f64) -> Result<Self> {
        Self::new(build_tight_binding(len, v, j)?, gamma1, gamma_l, f1, f_l)
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> &CMatrix {
        &self.h
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }

    pub fn gamma_l(&self) -> f64 {
        self.gamma_l
    }

    pub fn f1(&self) -> f64 {
        self.f1
    }

    pub fn f_l(&self) -> f64 {
        self.f_l
    }

    /// Zero-based index of the site a channel acts on.
    pub fn site_index(&self, site: Site) -> usize {
        match site {
            Site::First => 0,
            Site::Last => self.len() - 1,
        }
    }

    /// `gamma_i^- = gamma_i (1 - f_i)` or `gamma_i^+ = gamma_i f_i`.
    pub fn rate(&self, ch: Channel) -> f64 {
        let (g, f) = match ch.site {
            Site::First => (self.gamma1, self.f1),
            Site::Last => (self.gamma_l, self.f_l),
        };
        match ch.sign {
            Sign::Minus => g * (1.0 - f),
            Sign::Plus => g * f,
        }
    }

    /// Largest off-diagonal hopping magnitude.
    pub fn hopping_scale(&self) -> f64 {
        let n = self.len();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.h[[i, j]].norm());
                }
            }
        }
        m
    }
}

/// `h_ii = -V`, `h_{i,i+1} = h_{i+1,i} = -J`.
pub fn build_tight_binding(len: usize, v: f64, j: f64) -> Result<CMatrix> {
    if len < 2 {
        return Err(Error::InvalidSpec { field: "L", reason: format!("need at least 2 sites, got {len}") });
    }
    let mut h = Array2::zeros((len, len));
    for i in 0..len {
        h[[i, i]] = c(-v);
        if i + 1 < len {
            h[[i, i + 1]] = c(-j);
            h[[i + 1, i]] = c(-j);
        }
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct SingleParticleSet {
    /// `i h + diag(gamma_1, 0, .., 0, gamma_L) / 2`
    pub w: CMatrix,
    /// `diag(gamma_1 f_1, 0, .., 0, gamma_L f_L)`
    pub f: CMatrix,
    /// `W - F`, generator of the no-jump propagator `e^{-Q t}`.
    pub q: CMatrix,
    /// `gamma_1 f_1 + gamma_L f_L`
    pub gamma: f64,
    /// Jump rates indexed by [`Channel::index`].
    pub rates: [f64; 4],
}

impl SingleParticleSet {
    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }

    pub fn rate(&self, ch: Channel) -> f64 {
        self.rates[ch.index()]
    }

    pub fn site_index(&self, site: Site) -> usize {
        match site {
            Site::First => 0,
            Site::Last => self.len() - 1,
        }
    }
}

pub fn derive_single_particle(spec: &ChainSpec) -> SingleParticleSet {
    let n = spec.len();
    let mut damping = vec![0.0; n];
    damping[0] += 0.5 * spec.gamma1;
    damping[n - 1] += 0.5 * spec.gamma_l;
    let mut inject = vec![0.0; n];
    inject[0] += spec.gamma1 * spec.f1;
    inject[n - 1] += spec.gamma_l * spec.f_l;

    let w = spec.h.mapv(|z| z * num_complex::Complex64::i()) + from_real_diag(&damping);
    let f = from_real_diag(&inject);
    let q = &w - &f;
    let rates = Channel::ALL.map(|ch| spec.rate(ch));
    SingleParticleSet { w, f, q, gamma: spec.gamma1 * spec.f1 + spec.gamma_l * spec.f_l, rates }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Steady,
    Vacuum,
    Custom,
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateKind::Steady => "steady",
            StateKind::Vacuum => "vacuum",
            StateKind::Custom => "custom",
        })
    }
}

/// Gaussian state through its covariance `C_ij = <c_j^† c_i>`.
#[derive(Debug, Clone)]
pub struct GaussianState {
    c: CMatrix,
    kind: StateKind,
    lambda: Option<f64>,
}

impl GaussianState {
    /// Validate and wrap an arbitrary covariance matrix.
    pub fn custom(c: CMatrix) -> Result<Self> {
        let c = validated_covariance(c)?;
        Ok(GaussianState { c, kind: StateKind::Custom, lambda: None })
    }

    pub fn covariance(&self) -> &CMatrix {
        &self.c
    }

    pub fn kind(&self) -> StateKind {
        self.kind
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.c.nrows() == 0
    }

    /// `<c_i^† c_i>`; exactly zero for the vacuum.
    pub fn occupation(&self, i: usize) -> f64 {
        match self.kind {
            StateKind::Vacuum => 0.0,
            _ => self.c[[i, i]].re,
        }
    }
}

fn validated_covariance(c: CMatrix) -> Result<CMatrix> {
    let (rows, cols) = c.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    let defect = hermiticity_defect(&c);
    if defect > 1e-10 {
        return Err(Error::InvalidState(format!("covariance not Hermitian (defect {defect:.3e})")));
    }
    let c = (&c + &dagger(&c)).mapv(|z| z * 0.5);
    let (vals, _) = hermitian_eigen(&c)?;
    let lo = vals.first().copied().unwrap_or(0.0);
    let hi = vals.last().copied().unwrap_or(0.0);
    if lo < -STATE_TOL || hi > 1.0 + STATE_TOL {
        return Err(Error::InvalidState(format!("occupation eigenvalues span [{lo:.3e}, {hi:.3e}], outside [0, 1]")));
    }
    Ok(c)
}

/// Fixed point of `dC/dt = -(W C + C W^†) + F`.
pub fn steady_state(spec: &ChainSpec) -> Result<GaussianState> {
    if spec.gamma1 <= 0.0 || spec.gamma_l <= 0.0 {
        return Err(Error::InvalidSpec {
            field: "gamma1/gammaL",
            reason: "steady state requires both couplings > 0".into(),
        });
    }
    let sp = derive_single_particle(spec);
    let c = lyapunov_solve(&sp.w, &sp.f)?;
    let c = validated_covariance(c)?;
    Ok(GaussianState { c, kind: StateKind::Steady, lambda: None })
}

pub fn vacuum_state(len: usize) -> Result<GaussianState> {
    vacuum_state_with(len, VACUUM_LAMBDA)
}

pub fn vacuum_state_with(len: usize, lambda: f64) -> Result<GaussianState> {
    if len < 2 {
        return Err(Error::InvalidSpec { field: "L", reason: format!("need at least 2 sites, got {len}") });
    }
    if !(lambda > 0.0 && lambda <= 1e-8) {
        return Err(Error::InvalidState(format!("vacuum regularization must lie in (0, 1e-8], got {lambda}")));
    }
    Ok(GaussianState { c: identity(len).mapv(|z| z * lambda), kind: StateKind::Vacuum, lambda: Some(lambda) })
}

/// `e^{M} = (1 - C) C^{-1}`, `e^{-M} = C (1 - C)^{-1}` and
/// `Z = det(1 + e^{-M}) = 1 / det(1 - C)`.
#[derive(Debug, Clone)]
pub struct ExponentFactors {
    pub eplus: CMatrix,
    pub eminus: CMatrix,
    pub log_z: LogDet,
    /// Number of occupation eigenvalues moved into `[eps_occ, 1 - eps_occ]`.
    pub clipped: usize,
}

pub fn gaussian_exponent_factors(state: &GaussianState) -> Result<ExponentFactors> {
    gaussian_exponent_factors_with(state, EPS_OCC)
}

pub fn gaussian_exponent_factors_with(state: &GaussianState, eps_occ: f64) -> Result<ExponentFactors> {
    if state.kind == StateKind::Vacuum {
        return Err(Error::InvalidState("the vacuum has no finite exponent; use the vacuum formulas".into()));
    }
    let (vals, vecs) = hermitian_eigen(&state.c)?;
    let mut clipped = 0;
    let mut occ = Vec::with_capacity(vals.len());
    for &v in &vals {
        if v <= 0.0 || v >= 1.0 {
            return Err(Error::BoundaryOccupation { value: v });
        }
        let w = v.clamp(eps_occ, 1.0 - eps_occ);
        if w != v {
            clipped += 1;
        }
        occ.push(w);
    }
    let rebuild = |g: &dyn Fn(f64) -> f64| {
        let d: Vec<f64> = occ.iter().map(|&x| g(x)).collect();
        vecs.dot(&from_real_diag(&d)).dot(&dagger(&vecs))
    };
    let eplus = rebuild(&|x| (1.0 - x) / x);
    let eminus = rebuild(&|x| x / (1.0 - x));
    let one_minus_c = rebuild(&|x| 1.0 - x);
    let (_, det) = lu_logdet(&one_minus_c)?;
    Ok(ExponentFactors { eplus, eminus, log_z: det.inv(), clipped })
}

/// Covariance after evolving `c0` for time `t` under the full master
/// equation: `C(t) = C_ss + e^{-W t} (C0 - C_ss) e^{-W^† t}`.
pub fn relax_covariance(spec: &ChainSpec, c0: &CMatrix, t: f64) -> Result<CMatrix> {
    let sp = derive_single_particle(spec);
    let css = steady_state(spec)?.c;
    let g = expm(&sp.w.mapv(|z| z * (-t)))?;
    Ok(&css + &g.dot(&(c0 - &css)).dot(&dagger(&g)))
}

/// `Lu` of `1 - C`, exposed for callers that need repeated solves.
pub fn one_minus_covariance_lu(state: &GaussianState) -> Result<Lu> {
    Lu::new(&(identity(state.len()) - &state.c))
}
