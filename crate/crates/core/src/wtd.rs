//! Waiting-time densities `P(t, k|q)`: the density of the next detected
//! jump being `k` at time `t` after a jump `q`, for a Gaussian state.
//!
//! With `G = e^{-Q t}`, `K = G^† G`, covariance `C` and
//! `A = 1 - C + K C`, every density is
//!
//! ```text
//! P(t, k|q) = rate_k e^{-Gamma t} det(A) bracket(k, q) / w_q
//! ```
//!
//! where `w_q` is `1 - C_jj` for an injection `q = j+` and `C_jj` for an
//! extraction `q = j-`, and the bracket is a handful of matrix elements of
//! `A^{-1}` contracted with `G`, `K` and `C`. Only decaying exponentials
//! appear; `e^{+Q t}` and `C^{-1}` are never formed, so the formulas stay
//! finite for occupations at 0 or 1 and for long times. The vacuum uses
//! its own closed form ([`wtd_density_vacuum`]).

use std::fmt;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{Channel, GaussianState, Sign, SingleParticleSet, Site, StateKind};
use crate::error::{Error, Result};
use crate::matrix::{dagger, expm, identity, lu_logdet, norm1, CMatrix, LogDet, Lu};
use crate::oracle::MIN_JUMP_WEIGHT;

/// Condition estimate of `A` beyond which a point is flagged unreliable.
pub const COND_LIMIT: f64 = 1e12;
/// Allowed `|Im P| / |Re P|`.
pub const IMAG_TOL: f64 = 1e-9;
/// Negative values down to `-CLAMP_WINDOW` are treated as roundoff.
pub const CLAMP_WINDOW: f64 = 1e-12;
pub const DEFAULT_GRID_POINTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WtdFlag {
    Ok,
    /// A small negative roundoff value was set to zero.
    Clamped,
    /// The imaginary part exceeded [`IMAG_TOL`] relative to the real part.
    ImaginaryResidue,
    /// Ill-conditioned solve or a clearly negative density.
    Unreliable,
}

impl fmt::Display for WtdFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WtdFlag::Ok => "ok",
            WtdFlag::Clamped => "clamped",
            WtdFlag::ImaginaryResidue => "imaginary_residue",
            WtdFlag::Unreliable => "unreliable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WtdPoint {
    pub t: f64,
    pub value: f64,
    /// 1-norm condition estimate of `A`; 1 for the vacuum formulas.
    pub cond_estimate: f64,
    pub flag: WtdFlag,
}

/// Weight `tr J_q(rho)` of the conditioning jump.
pub fn jump_weight(q: Channel, state: &GaussianState, sp: &SingleParticleSet) -> f64 {
    let n = state.occupation(sp.site_index(q.site));
    let occ = match q.sign {
        Sign::Plus => 1.0 - n,
        Sign::Minus => n,
    };
    sp.rate(q) * occ
}

pub fn is_admissible(q: Channel, state: &GaussianState, sp: &SingleParticleSet) -> bool {
    jump_weight(q, state, sp) > MIN_JUMP_WEIGHT
}

fn finalize(t: f64, raw: C64, cond: f64, rate: f64) -> WtdPoint {
    let mut flag = WtdFlag::Ok;
    let mut value = raw.re;
    if value < 0.0 {
        flag = if value >= -CLAMP_WINDOW { WtdFlag::Clamped } else { WtdFlag::Unreliable };
        value = 0.0;
    }
    if raw.im.abs() > IMAG_TOL * raw.re.abs() && raw.im.abs() > 1e-15 * rate {
        flag = flag.max(WtdFlag::ImaginaryResidue);
    }
    if !(cond <= COND_LIMIT) {
        flag = WtdFlag::Unreliable;
    }
    WtdPoint { t, value, cond_estimate: cond, flag }
}

fn check_inputs(t: f64, state: &GaussianState, sp: &SingleParticleSet) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidSpec { field: "t", reason: format!("time must be finite and >= 0, got {t}") });
    }
    if state.len() != sp.len() {
        return Err(Error::DimensionMismatch { expected: sp.len(), found: state.len() });
    }
    Ok(())
}

fn dot(a: &Array1<C64>, b: &Array1<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Per-site vectors reused by every density at one `t`.
#[derive(Debug, Clone)]
struct SiteVectors {
    /// `A^{-1} G^† e_s`
    y: Array1<C64>,
    /// `A^{-1} K e_s`
    z: Array1<C64>,
    /// `A^{-1} e_s`
    w: Array1<C64>,
    /// row `s` of `G C`
    gc_row: Array1<C64>,
    /// row `s` of `C`
    c_row: Array1<C64>,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Body {
    Vacuum,
    General { det: LogDet, sites: [SiteVectors; 2] },
}

/// Everything needed to evaluate the sixteen densities at a single time.
#[derive(Debug, Clone)]
pub struct Propagation {
    t: f64,
    rates: [f64; 4],
    gamma: f64,
    last: usize,
    occupations: [f64; 2],
    g: CMatrix,
    k_diag: [f64; 2],
    cond: f64,
    body: Body,
}

impl Propagation {
    pub fn new(t: f64, state: &GaussianState, sp: &SingleParticleSet) -> Result<Self> {
        check_inputs(t, state, sp)?;
        let n = sp.len();
        let last = n - 1;
        let g = expm(&sp.q.mapv(|z| z * (-t)))?;
        let gh = dagger(&g);
        let k_diag = [0, last].map(|s| g.column(s).iter().map(|z| z.norm_sqr()).sum());
        let occupations = [state.occupation(0), state.occupation(last)];
        let base = Propagation { t, rates: sp.rates, gamma: sp.gamma, last, occupations, g, k_diag, cond: 1.0, body: Body::Vacuum };
        if state.kind() == StateKind::Vacuum {
            return Ok(base);
        }

        let c = state.covariance();
        let k = gh.dot(&base.g);
        let a = &identity(n) - c + &k.dot(c);
        let (lu, det) = lu_logdet(&a)?;
        let cond = lu.condition_estimate(norm1(&a));

        let mut rhs = Array2::zeros((n, 6));
        for (slot, s) in [0, last].into_iter().enumerate() {
            rhs.column_mut(slot).assign(&gh.column(s));
            rhs.column_mut(2 + slot).assign(&k.column(s));
            rhs[[s, 4 + slot]] = C64::new(1.0, 0.0);
        }
        let sol = lu.solve(&rhs)?;
        let sites = [0usize, 1].map(|slot| {
            let s = if slot == 0 { 0 } else { last };
            SiteVectors {
                y: sol.column(slot).to_owned(),
                z: sol.column(2 + slot).to_owned(),
                w: sol.column(4 + slot).to_owned(),
                gc_row: base.g.row(s).dot(c),
                c_row: c.row(s).to_owned(),
            }
        });
        Ok(Propagation { cond, body: Body::General { det, sites }, ..base })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn cond_estimate(&self) -> f64 {
        self.cond
    }

    fn slot(site: Site) -> usize {
        match site {
            Site::First => 0,
            Site::Last => 1,
        }
    }

    fn index(&self, site: Site) -> usize {
        match site {
            Site::First => 0,
            Site::Last => self.last,
        }
    }

    fn weight(&self, q: Channel) -> f64 {
        let n = self.occupations[Self::slot(q.site)];
        let occ = match q.sign {
            Sign::Plus => 1.0 - n,
            Sign::Minus => n,
        };
        self.rates[q.index()] * occ
    }

    fn envelope(&self) -> f64 {
        (-self.gamma * self.t).exp()
    }

    /// `P(t, k|q)`.
    pub fn density(&self, k: Channel, q: Channel) -> Result<WtdPoint> {
        let weight = self.weight(q);
        let rate = self.rates[k.index()];
        if matches!(self.body, Body::Vacuum) {
            return Ok(self.vacuum_density(k, q));
        }
        if weight <= MIN_JUMP_WEIGHT {
            return Err(Error::VanishingDenominator { channel: q, weight });
        }
        let Body::General { det, sites } = &self.body else { unreachable!() };
        let (i, j) = (self.index(k.site), self.index(q.site));
        let (vi, vj) = (&sites[Self::slot(k.site)], &sites[Self::slot(q.site)]);
        let one = C64::new(1.0, 0.0);

        let t_ii = dot(&vi.gc_row, &vi.y);
        let (t1, t2) = match q.sign {
            Sign::Plus => (
                // ((1 - C) A^{-1} K)_jj
                vj.z[j] - dot(&vj.c_row, &vj.z),
                // (G (1 - C A^{-1} K))_ij ((1 - C) A^{-1} G^†)_ji
                (self.g[[i, j]] - dot(&vi.gc_row, &vj.z)) * (vi.y[j] - dot(&vj.c_row, &vi.y)),
            ),
            // (C A^{-1})_jj and (G C A^{-1})_ij (C A^{-1} G^†)_ji
            Sign::Minus => (dot(&vj.c_row, &vj.w), dot(&vi.gc_row, &vj.w) * dot(&vj.c_row, &vi.y)),
        };
        let bracket = match (k.sign, q.sign) {
            (Sign::Minus, Sign::Plus) => t1 * t_ii + t2,
            (Sign::Plus, Sign::Plus) => t1 * (one - t_ii) - t2,
            (Sign::Minus, Sign::Minus) => t1 * t_ii - t2,
            (Sign::Plus, Sign::Minus) => t1 * (one - t_ii) + t2,
        };
        let pref = det.phase * (det.log_abs - self.gamma * self.t).exp() * (rate * self.inverse_occupation(q, weight));
        Ok(finalize(self.t, pref * bracket, self.cond, rate))
    }

    /// `rate_q / w_q`, i.e. one over the occupation factor of `q`.
    fn inverse_occupation(&self, q: Channel, weight: f64) -> f64 {
        self.rates[q.index()] / weight
    }

    fn vacuum_density(&self, k: Channel, q: Channel) -> WtdPoint {
        let rate = self.rates[k.index()];
        if q.sign == Sign::Minus {
            return WtdPoint { t: self.t, value: 0.0, cond_estimate: 1.0, flag: WtdFlag::Ok };
        }
        let (i, j) = (self.index(k.site), self.index(q.site));
        // G_ij (G^†)_ji = |G_ij|^2
        let transfer = self.g[[i, j]].norm_sqr();
        let inner = match k.sign {
            Sign::Minus => transfer,
            Sign::Plus => self.k_diag[Self::slot(q.site)] - transfer,
        };
        finalize(self.t, C64::new(rate * self.envelope() * inner, 0.0), 1.0, rate)
    }

    /// Probability that no jump has occurred by `t` after `q`,
    /// `S_q(t) = sum_k int_t^inf P(s, k|q) ds`.
    pub fn survival(&self, q: Channel) -> Result<f64> {
        let weight = self.weight(q);
        if weight <= MIN_JUMP_WEIGHT {
            return Err(Error::VanishingDenominator { channel: q, weight });
        }
        let slot = Self::slot(q.site);
        match &self.body {
            Body::Vacuum => Ok(self.envelope() * self.k_diag[slot]),
            Body::General { det, sites } => {
                let j = self.index(q.site);
                let v = &sites[slot];
                let inner = match q.sign {
                    // (K A^{-†} (1 - C))_jj, the conjugate of ((1 - C) A^{-1} K)_jj
                    Sign::Plus => (v.z[j] - dot(&v.c_row, &v.z)).conj(),
                    Sign::Minus => dot(&v.c_row, &v.w),
                };
                let pref = det.phase * (det.log_abs - self.gamma * self.t).exp() * self.inverse_occupation(q, weight);
                Ok((pref * inner).re.max(0.0))
            }
        }
    }
}

/// `P(t, k|q)` for a Gaussian state; dispatches to the vacuum formulas
/// for vacuum states.
pub fn wtd_density(t: f64, k: Channel, q: Channel, state: &GaussianState, sp: &SingleParticleSet) -> Result<WtdPoint> {
    let p = Propagation::new(t, state, sp).map_err(|e| match e {
        Error::Singular { .. } => Error::SingularPropagation { t, to: k, from: q },
        e => e,
    })?;
    p.density(k, q)
}

/// Vacuum formulas: `P(t, i-|j+) = rate e^{-Gamma t} |G_ij|^2`,
/// `P(t, i+|j+) = rate e^{-Gamma t} (K_jj - |G_ij|^2)`, and zero for `q = j-`.
pub fn wtd_density_vacuum(t: f64, k: Channel, q: Channel, sp: &SingleParticleSet) -> Result<WtdPoint> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidSpec { field: "t", reason: format!("time must be finite and >= 0, got {t}") });
    }
    if q.sign == Sign::Minus {
        return Ok(WtdPoint { t, value: 0.0, cond_estimate: 1.0, flag: WtdFlag::Ok });
    }
    let g = expm(&sp.q.mapv(|z| z * (-t)))?;
    let last = sp.len() - 1;
    let k_diag = [0, last].map(|s| g.column(s).iter().map(|z| z.norm_sqr()).sum());
    let p = Propagation {
        t,
        rates: sp.rates,
        gamma: sp.gamma,
        last,
        occupations: [0.0, 0.0],
        g,
        k_diag,
        cond: 1.0,
        body: Body::Vacuum,
    };
    Ok(p.vacuum_density(k, q))
}

/// All sixteen densities at one time, indexed `[k][q]`.
#[derive(Debug, Clone)]
pub struct WtdTable {
    pub t: f64,
    pub cond_estimate: f64,
    /// `None` where the conditioning jump `q` is impossible.
    pub entries: [[Option<WtdPoint>; 4]; 4],
    pub survival: [Option<f64>; 4],
}

pub fn wtd_table(t: f64, state: &GaussianState, sp: &SingleParticleSet) -> Result<WtdTable> {
    let p = Propagation::new(t, state, sp)?;
    let mut entries = [[None; 4]; 4];
    let mut survival = [None; 4];
    for q in Channel::ALL {
        if !is_admissible(q, state, sp) {
            continue;
        }
        survival[q.index()] = Some(p.survival(q)?);
        for k in Channel::ALL {
            entries[k.index()][q.index()] = Some(p.density(k, q)?);
        }
    }
    Ok(WtdTable { t, cond_estimate: p.cond_estimate(), entries, survival })
}

/// Strictly increasing, non-negative sample times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidSpec { field: "grid", reason: "no sample times".into() });
        }
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidSpec { field: "grid", reason: "times must be finite and >= 0".into() });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSpec { field: "grid", reason: "times must be strictly increasing".into() });
        }
        Ok(TimeGrid { times })
    }

    /// `points` equally spaced times on `[0, t_max]`, both ends included.
    pub fn uniform(t_max: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidSpec { field: "grid.points", reason: format!("need at least 2 points, got {points}") });
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidSpec { field: "grid.t_max", reason: format!("must be finite and > 0, got {t_max}") });
        }
        let step = t_max / (points - 1) as f64;
        Self::from_times((0..points).map(|k| if k + 1 == points { t_max } else { k as f64 * step }).collect())
    }

    /// Uniform grid on `[0, default_t_max(sp)]`.
    pub fn default_for(sp: &SingleParticleSet, points: usize) -> Result<Self> {
        Self::uniform(default_t_max(sp)?, points)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Largest off-diagonal `|h_ij|`, read off `W = i h + damping`.
pub fn effective_hopping(sp: &SingleParticleSet) -> f64 {
    let n = sp.len();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m = m.max(sp.w[[i, j]].norm());
            }
        }
    }
    m
}

/// `max(20 / Gamma, 4 L / J_eff)`, covering the bath decay time and the
/// ballistic traversal time.
pub fn default_t_max(sp: &SingleParticleSet) -> Result<f64> {
    let decay = if sp.gamma > 0.0 { 20.0 / sp.gamma } else { 0.0 };
    let j = effective_hopping(sp);
    let ballistic = if j > 0.0 { 4.0 * sp.len() as f64 / j } else { 0.0 };
    let t = decay.max(ballistic);
    if t > 0.0 {
        Ok(t)
    } else {
        Err(Error::NoDecayScale)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WtdCurve {
    pub to: Channel,
    pub from: Channel,
    pub state_kind: StateKind,
    pub points: Vec<WtdPoint>,
}

impl WtdCurve {
    /// Number of points with a flag other than [`WtdFlag::Ok`].
    pub fn flagged(&self) -> usize {
        self.points.iter().filter(|p| p.flag != WtdFlag::Ok).count()
    }

    pub fn worst_flag(&self) -> WtdFlag {
        self.points.iter().map(|p| p.flag).max().unwrap_or(WtdFlag::Ok)
    }
}

/// `P(t, k|q)` on every grid time, evaluated in parallel.
pub fn wtd_curve(k: Channel, q: Channel, state: &GaussianState, sp: &SingleParticleSet, grid: &TimeGrid) -> Result<WtdCurve> {
    if !is_admissible(q, state, sp) && state.kind() != StateKind::Vacuum {
        return Err(Error::VanishingDenominator { channel: q, weight: jump_weight(q, state, sp) });
    }
    let points = grid.times().par_iter().map(|&t| wtd_density(t, k, q, state, sp)).collect::<Result<Vec<_>>>()?;
    Ok(WtdCurve { to: k, from: q, state_kind: state.kind(), points })
}

/// Literal evaluation through the generic trace-determinant formulas with
/// `e^X = e^{-Q t}`, `e^Y = e^{-M}` (the state's exponent) and
/// `e^Z = e^{-Q^† t}`. Independent of [`Propagation`]; meant for
/// cross-checks on small chains, since it forms `det(1 + e^X e^Y e^Z)`
/// and `e^{+Q t}` explicitly.
pub mod reference {
    use super::*;
    use crate::chain::gaussian_exponent_factors;
    use crate::tracedet::{trace_two_insert, ExpFactor, InsertIndices, TwoInsertKind};

    pub fn wtd_density_reference(t: f64, k: Channel, q: Channel, state: &GaussianState, sp: &SingleParticleSet) -> Result<f64> {
        check_inputs(t, state, sp)?;
        let weight = jump_weight(q, state, sp);
        if weight <= MIN_JUMP_WEIGHT {
            return Err(Error::VanishingDenominator { channel: q, weight });
        }
        let n = sp.len();
        let g = expm(&sp.q.mapv(|z| z * (-t)))?;
        let g_inv = Lu::new(&g)?.solve(&identity(n))?;
        let x = ExpFactor::from_exponentials(g.clone(), g_inv.clone())?;
        let z = ExpFactor::from_exponentials(dagger(&g), dagger(&g_inv))?;
        let factors = gaussian_exponent_factors(state)?;
        let y = ExpFactor::from_exponentials(factors.eminus, factors.eplus)?;

        let kind = match (k.sign, q.sign) {
            (Sign::Minus, Sign::Plus) => TwoInsertKind::SplitMp,
            (Sign::Plus, Sign::Plus) => TwoInsertKind::SplitPp,
            (Sign::Minus, Sign::Minus) => TwoInsertKind::SplitMm,
            (Sign::Plus, Sign::Minus) => TwoInsertKind::SplitPm,
        };
        let idx = InsertIndices::diagonal(sp.site_index(k.site), sp.site_index(q.site));
        let trace = trace_two_insert(kind, idx, &x, &y, &z)?;
        let value = trace / factors.log_z.value() * (sp.rate(k) * sp.rate(q) / weight * (-sp.gamma * t).exp());
        Ok(value.re)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{derive_single_particle, steady_state, vacuum_state, ChainSpec};
    use crate::matrix::max_abs;

    fn section_v(len: usize) -> ChainSpec {
        ChainSpec::tight_binding(len, 1.0, 1.0, 0.1, 0.1, 1.0, 0.0).unwrap()
    }

    fn generic(len: usize) -> ChainSpec {
        ChainSpec::tight_binding(len, 0.7, 1.0, 0.1, 0.15, 0.8, 0.3).unwrap()
    }

    #[test]
    fn adjoint_exponential_consistency() {
        let sp = derive_single_particle(&generic(6));
        for t in [0.3, 4.0, 60.0] {
            let g = expm(&sp.q.mapv(|z| z * (-t))).unwrap();
            let direct = expm(&dagger(&sp.q).mapv(|z| z * (-t))).unwrap();
            assert!(max_abs(&(dagger(&g) - direct)) <= 1e-12);
        }
    }

    #[test]
    fn full_extraction_bath_gives_zero_first_site_loss() {
        let spec = section_v(4);
        let sp = derive_single_particle(&spec);
        let st = steady_state(&spec).unwrap();
        for t in [0.0, 1.0, 7.5] {
            let tab = wtd_table(t, &st, &sp).unwrap();
            for q in 0..4 {
                if let Some(p) = tab.entries[Channel::FIRST_MINUS.index()][q] {
                    assert_eq!(p.value, 0.0);
                }
            }
        }
    }

    #[test]
    fn vacuum_zero_time_values() {
        let sp = derive_single_particle(&section_v(5));
        let p = wtd_density_vacuum(0.0, Channel::LAST_MINUS, Channel::FIRST_PLUS, &sp).unwrap();
        assert_eq!(p.value, 0.0);
        let p = wtd_density_vacuum(0.0, Channel::FIRST_PLUS, Channel::FIRST_PLUS, &sp).unwrap();
        assert!(p.value.abs() < 1e-16);
        let p = wtd_density_vacuum(3.0, Channel::FIRST_PLUS, Channel::LAST_MINUS, &sp).unwrap();
        assert_eq!(p.value, 0.0);
    }

    #[test]
    fn vacuum_state_dispatches_to_vacuum_formulas() {
        let sp = derive_single_particle(&section_v(3));
        let vac = vacuum_state(3).unwrap();
        for t in [0.5, 2.0] {
            let a = wtd_density(t, Channel::LAST_MINUS, Channel::FIRST_PLUS, &vac, &sp).unwrap();
            let b = wtd_density_vacuum(t, Channel::LAST_MINUS, Channel::FIRST_PLUS, &sp).unwrap();
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn general_formula_at_zero_covariance_is_vacuum() {
        // C = 0 exactly makes A = 1; the general brackets collapse to the
        // vacuum expressions for injection-conditioned densities.
        let spec = generic(4);
        let sp = derive_single_particle(&spec);
        let zero = GaussianState::custom(Array2::zeros((4, 4))).unwrap();
        for t in [0.0, 0.7, 3.0] {
            for k in Channel::ALL {
                for q in [Channel::FIRST_PLUS, Channel::LAST_PLUS] {
                    let a = wtd_density(t, k, q, &zero, &sp).unwrap().value;
                    let b = wtd_density_vacuum(t, k, q, &sp).unwrap().value;
                    assert!((a - b).abs() <= 1e-13 * b.abs().max(1e-3), "{t} {k} {q}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn survival_starts_at_one_and_decreases_by_density() {
        let spec = generic(4);
        let sp = derive_single_particle(&spec);
        let st = steady_state(&spec).unwrap();
        for q in Channel::ALL {
            let s0 = Propagation::new(0.0, &st, &sp).unwrap().survival(q).unwrap();
            assert!((s0 - 1.0).abs() < 1e-12, "{q}: {s0}");
            let (t, h) = (2.3, 1e-4);
            let sp_ = Propagation::new(t + h, &st, &sp).unwrap().survival(q).unwrap();
            let sm = Propagation::new(t - h, &st, &sp).unwrap().survival(q).unwrap();
            let total: f64 = Channel::ALL.iter().map(|&k| wtd_density(t, k, q, &st, &sp).unwrap().value).sum();
            assert!(((sm - sp_) / (2.0 * h) - total).abs() < 1e-7, "{q}");
        }
    }

    #[test]
    fn reference_route_agrees() {
        let spec = generic(3);
        let sp = derive_single_particle(&spec);
        let st = steady_state(&spec).unwrap();
        for t in [0.0, 0.4, 5.0, 30.0] {
            for k in Channel::ALL {
                for q in Channel::ALL {
                    let a = wtd_density(t, k, q, &st, &sp).unwrap().value;
                    let b = reference::wtd_density_reference(t, k, q, &st, &sp).unwrap();
                    assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-4), "{t} {k}|{q}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::from_times(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeGrid::from_times(vec![-1.0, 1.0]).is_err());
        let g = TimeGrid::uniform(10.0, 5).unwrap();
        assert_eq!(g.times(), &[0.0, 2.5, 5.0, 7.5, 10.0]);
        let sp = derive_single_particle(&section_v(5));
        // 20 / 0.1 dominates 4 * 5 / 1
        assert!((default_t_max(&sp).unwrap() - 200.0).abs() < 1e-12);
    }

    #[test]
    fn curve_keeps_grid_order() {
        let spec = section_v(4);
        let sp = derive_single_particle(&spec);
        let st = steady_state(&spec).unwrap();
        let grid = TimeGrid::uniform(20.0, 41).unwrap();
        let c = wtd_curve(Channel::LAST_MINUS, Channel::FIRST_PLUS, &st, &sp, &grid).unwrap();
        assert_eq!(c.points.len(), 41);
        assert!(c.points.iter().zip(grid.times()).all(|(p, t)| p.t == *t));
        assert_eq!(c.worst_flag(), WtdFlag::Ok);
    }

    #[test]
    fn negative_time_rejected() {
        let spec = section_v(2);
        let sp = derive_single_particle(&spec);
        let st = steady_state(&spec).unwrap();
        assert!(wtd_density(-1.0, Channel::FIRST_PLUS, Channel::FIRST_PLUS, &st, &sp).is_err());
    }
}
