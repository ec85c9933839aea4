//! Integrals over waiting-time densities: jump probabilities `p(k|q)`,
//! conditional moments, the net activity time distribution (NATD) and
//! normalization audits.
//!
//! All integrals run on `[0, T_cut]` with adaptive Gauss–Kronrod (7/15)
//! quadrature. `T_cut` is chosen from a bound on the neglected tail, which
//! is reported with every result.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{Channel, GaussianState, SingleParticleSet, StateKind};
use crate::error::{Error, Result};
use crate::matrix::norm1;
use crate::wtd::{is_admissible, jump_weight, Propagation, TimeGrid, WtdFlag, WtdPoint};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SUBDIVISIONS: usize = 50_000;
/// Conditional moments are undefined below this channel probability.
pub const EPS_P: f64 = 1e-12;
/// Allowed `|sum_k p(k|q) - 1|`.
pub const AUDIT_TOL: f64 = 1e-6;
const MAX_CUTOFF: f64 = 1e9;
const MIN_SEGMENTS: usize = 16;
const MAX_INITIAL_SEGMENTS: usize = 8192;
const REFINE_BATCH: usize = 16;

/// How the integration range `[0, T_cut]` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Cutoff {
    /// Smallest doubling of the initial scale whose tail bound is below `tol / 10`.
    Auto,
    Fixed(f64),
    /// The automatic cutoff multiplied by a factor.
    Scaled(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureOptions {
    /// Error target: absolute for integrals of size <= 1, relative above.
    pub tol: f64,
    pub max_subdivisions: usize,
    pub cutoff: Cutoff,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions { tol: DEFAULT_TOL, max_subdivisions: DEFAULT_MAX_SUBDIVISIONS, cutoff: Cutoff::Auto }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureResult {
    pub value: f64,
    /// Quadrature error estimate plus the truncation tail bound.
    pub abs_error_estimate: f64,
    pub evaluations: usize,
    pub truncation_tail_bound: f64,
    pub cutoff: f64,
}

/// Bound on `int_T^inf |f(t)| dt` for an integrand.
pub trait TailBound: Sync {
    fn tail(&self, cutoff: f64) -> f64;
    /// Time scale used to seed the cutoff search and the initial partition.
    fn scale(&self) -> f64;
}

/// `|f(t)| <= amplitude e^{-rate t}`.
#[derive(Debug, Clone, Copy)]
pub struct ExponentialEnvelope {
    amplitude: f64,
    rate: f64,
}

impl ExponentialEnvelope {
    pub fn new(amplitude: f64, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::NoDecayScale);
        }
        Ok(ExponentialEnvelope { amplitude: amplitude.abs(), rate })
    }
}

impl TailBound for ExponentialEnvelope {
    fn tail(&self, cutoff: f64) -> f64 {
        self.amplitude * (-self.rate * cutoff).exp() / self.rate
    }

    fn scale(&self) -> f64 {
        1.0 / self.rate
    }
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1] (QUADPACK qk15).
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Debug, Clone)]
struct Segment {
    a: f64,
    b: f64,
    values: Vec<f64>,
    errors: Vec<f64>,
    priority: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority).then(other.a.total_cmp(&self.a))
    }
}

fn gk15<F>(f: &F, a: f64, b: f64, dim: usize) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut add = |x: f64, wk: f64, wg: f64| -> Result<()> {
        let v = f(x)?;
        for c in 0..dim {
            kronrod[c] += wk * v[c];
            gauss[c] += wg * v[c];
        }
        Ok(())
    };
    add(center, WGK[7], WG[3])?;
    for k in 0..7 {
        let wg = if k % 2 == 1 { WG[k / 2] } else { 0.0 };
        let dx = half * XGK[k];
        add(center - dx, WGK[k], wg)?;
        add(center + dx, WGK[k], wg)?;
    }
    let values: Vec<f64> = kronrod.iter().map(|v| v * half).collect();
    let errors = kronrod.iter().zip(&gauss).map(|(k, g)| ((k - g) * half).abs()).collect();
    Ok((values, errors))
}

#[derive(Debug, Clone)]
pub(crate) struct VectorQuadrature {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub evaluations: usize,
}

/// Adaptive quadrature of a vector-valued integrand on `[a, b]`.
/// Component `c` converges when its summed error is below
/// `tol * max(1, |I_c|)`.
pub(crate) fn adaptive_vector<F>(
    f: &F,
    dim: usize,
    a: f64,
    b: f64,
    segments: usize,
    tol: f64,
    max_subdivisions: usize,
) -> Result<VectorQuadrature>
where
    F: Fn(f64) -> Result<Vec<f64>> + Sync,
{
    let segments = segments.clamp(1, MAX_INITIAL_SEGMENTS);
    let width = (b - a) / segments as f64;
    let initial = (0..segments)
        .into_par_iter()
        .map(|s| {
            let lo = a + s as f64 * width;
            let hi = if s + 1 == segments { b } else { lo + width };
            gk15(f, lo, hi, dim).map(|(values, errors)| Segment { a: lo, b: hi, values, errors, priority: 0.0 })
        })
        .collect::<Result<Vec<_>>>()?;

    let totals = |segs: &[Segment]| -> (Vec<f64>, Vec<f64>) {
        let mut v = vec![0.0; dim];
        let mut e = vec![0.0; dim];
        for s in segs {
            for c in 0..dim {
                v[c] += s.values[c];
                e[c] += s.errors[c];
            }
        }
        (v, e)
    };
    let (v0, _) = totals(&initial);
    let scales: Vec<f64> = v0.iter().map(|v| tol * v.abs().max(1.0)).collect();
    let priority = |s: &Segment| s.errors.iter().zip(&scales).map(|(e, sc)| e / sc).fold(0.0, f64::max);

    let mut heap: BinaryHeap<Segment> = initial
        .into_iter()
        .map(|mut s| {
            s.priority = priority(&s);
            s
        })
        .collect();
    let mut evaluations = segments * 15;
    let mut subdivisions = 0;
    loop {
        let segs = heap.as_slice();
        let (values, errors) = totals(segs);
        let converged = values.iter().zip(&errors).all(|(v, e)| *e <= tol * v.abs().max(1.0));
        if converged {
            return Ok(VectorQuadrature { values, errors, evaluations });
        }
        if subdivisions >= max_subdivisions {
            let worst = errors.iter().zip(&values).map(|(e, v)| e / v.abs().max(1.0)).fold(0.0, f64::max);
            return Err(Error::QuadratureNoConvergence { subdivisions, error: worst });
        }
        let batch: Vec<Segment> = (0..REFINE_BATCH).filter_map(|_| heap.pop()).collect();
        let halves = batch
            .par_iter()
            .flat_map_iter(|s| {
                let mid = 0.5 * (s.a + s.b);
                [(s.a, mid), (mid, s.b)]
            })
            .map(|(lo, hi)| gk15(f, lo, hi, dim).map(|(values, errors)| Segment { a: lo, b: hi, values, errors, priority: 0.0 }))
            .collect::<Result<Vec<_>>>()?;
        evaluations += halves.len() * 15;
        subdivisions += batch.len();
        for mut s in halves {
            s.priority = priority(&s);
            heap.push(s);
        }
    }
}

fn search_cutoff<T>(start: f64, tail: T, target: f64) -> Result<f64>
where
    T: Fn(f64) -> Result<f64>,
{
    let mut t = start.max(1e-3);
    while t <= MAX_CUTOFF {
        if tail(t)? < target {
            return Ok(t);
        }
        t *= 2.0;
    }
    Err(Error::NoDecayScale)
}

fn resolve_cutoff<T>(cutoff: Cutoff, start: f64, tail: T, target: f64) -> Result<f64>
where
    T: Fn(f64) -> Result<f64>,
{
    match cutoff {
        Cutoff::Fixed(t) if t > 0.0 && t.is_finite() => Ok(t),
        Cutoff::Fixed(t) => Err(Error::InvalidSpec { field: "cutoff", reason: format!("must be finite and > 0, got {t}") }),
        Cutoff::Auto => search_cutoff(start, tail, target),
        Cutoff::Scaled(s) => Ok(s * search_cutoff(start, tail, target)?),
    }
}

/// `int_0^inf f(t) dt` for an integrand with a known tail bound.
pub fn integrate_semiinfinite<F>(f: F, tail: &dyn TailBound, opts: &QuadratureOptions) -> Result<QuadratureResult>
where
    F: Fn(f64) -> f64 + Sync,
{
    let target = opts.tol / 10.0;
    let cutoff = resolve_cutoff(opts.cutoff, tail.scale(), |t| Ok(tail.tail(t)), target)?;
    let segments = (cutoff / tail.scale()).ceil() as usize * 4;
    let q = adaptive_vector(&|t| Ok(vec![f(t)]), 1, 0.0, cutoff, segments.max(MIN_SEGMENTS), opts.tol, opts.max_subdivisions)?;
    let bound = tail.tail(cutoff);
    Ok(QuadratureResult {
        value: q.values[0],
        abs_error_estimate: q.errors[0] + bound,
        evaluations: q.evaluations,
        truncation_tail_bound: bound,
        cutoff,
    })
}

/// Tail bound for `int_T^inf t^m (-S'(t)) dt` from a survival function `S`.
///
/// Assumes `S(t) <= S(T) e^{-r (t - T)}` beyond `T`, with `r` half the decay
/// rate measured between `T/2` and `T`. Integrating by parts gives
/// `S(T) sum_{j<=m} m!/(m-j)! T^{m-j} / r^j`.
fn survival_moment_tails<S>(survival: &S, t: f64) -> Result<[f64; 3]>
where
    S: Fn(f64) -> Result<f64>,
{
    let s_t = survival(t)?;
    if s_t <= 0.0 {
        return Ok([0.0; 3]);
    }
    let s_half = survival(0.5 * t)?;
    let measured = (s_half / s_t).ln() / (0.5 * t);
    if !(measured > 0.0 && measured.is_finite()) {
        return Ok([f64::INFINITY; 3]);
    }
    let r = 0.5 * measured;
    Ok([s_t, s_t * (t + 1.0 / r), s_t * (t * t + 2.0 * t / r + 2.0 / (r * r))])
}

/// Moments of the survival law used to make tail targets relative.
fn moment_scales<S>(survival: &S, t: f64) -> Result<[f64; 3]>
where
    S: Fn(f64) -> Result<f64>,
{
    let s = survival(t)?;
    let r = if s > 0.0 { -s.ln() / t } else { f64::INFINITY };
    Ok([1.0, (1.0 / r).max(1.0), (2.0 / (r * r)).max(1.0)])
}

fn survival_cutoff<S>(survival: &S, start: f64, opts: &QuadratureOptions) -> Result<(f64, f64)>
where
    S: Fn(f64) -> Result<f64>,
{
    let target = opts.tol / 10.0;
    let ratio = |t: f64| -> Result<f64> {
        let tails = survival_moment_tails(survival, t)?;
        let scales = moment_scales(survival, t)?;
        Ok((0..3).map(|m| tails[m] / scales[m]).fold(0.0, f64::max))
    };
    let cutoff = resolve_cutoff(opts.cutoff, start, ratio, target)?;
    let tails = survival_moment_tails(survival, cutoff)?;
    Ok((cutoff, tails[0]))
}

/// Time step that resolves the fastest single-particle frequency.
fn feature_time(sp: &SingleParticleSet) -> f64 {
    2.0 / norm1(&sp.q).max(1e-12)
}

fn cutoff_seed(sp: &SingleParticleSet) -> f64 {
    crate::wtd::default_t_max(sp).unwrap_or(1.0) / 4.0
}

/// `int_0^inf t^m P(t, k|q) dt` for all `k` and `m = 0, 1, 2`.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalIntegrals {
    pub q: Channel,
    /// `[m][k]`
    pub moments: [[f64; 4]; 3],
    pub errors: [[f64; 4]; 3],
    pub evaluations: usize,
    pub cutoff: f64,
    pub truncation_tail_bound: f64,
}

impl ConditionalIntegrals {
    pub fn probability(&self, k: Channel) -> f64 {
        self.moments[0][k.index()]
    }

    pub fn audit(&self) -> f64 {
        self.moments[0].iter().sum()
    }

    /// Conditional mean and variance of the waiting time before `k`.
    pub fn conditional_moments(&self, k: Channel) -> Result<(f64, f64)> {
        let i = k.index();
        let p = self.moments[0][i];
        if !(p > EPS_P) {
            return Err(Error::VanishingProbability { to: k, from: self.q, p });
        }
        let mean = self.moments[1][i] / p;
        let var = (self.moments[2][i] / p - mean * mean).max(0.0);
        Ok((mean, var))
    }
}

pub fn conditional_integrals(
    q: Channel,
    state: &GaussianState,
    sp: &SingleParticleSet,
    opts: &QuadratureOptions,
) -> Result<ConditionalIntegrals> {
    if !is_admissible(q, state, sp) {
        return Err(Error::VanishingDenominator { channel: q, weight: jump_weight(q, state, sp) });
    }
    let survival = |t: f64| Propagation::new(t, state, sp)?.survival(q);
    let (cutoff, bound) = survival_cutoff(&survival, cutoff_seed(sp), opts)?;
    let integrand = |t: f64| -> Result<Vec<f64>> {
        let p = Propagation::new(t, state, sp)?;
        let mut out = vec![0.0; 12];
        for k in Channel::ALL {
            let v = p.density(k, q)?.value;
            out[k.index()] = v;
            out[4 + k.index()] = t * v;
            out[8 + k.index()] = t * t * v;
        }
        Ok(out)
    };
    let segments = (cutoff / feature_time(sp)).ceil() as usize;
    let quad = adaptive_vector(&integrand, 12, 0.0, cutoff, segments.max(MIN_SEGMENTS), opts.tol, opts.max_subdivisions)?;
    let mut moments = [[0.0; 4]; 3];
    let mut errors = [[0.0; 4]; 3];
    for m in 0..3 {
        for k in 0..4 {
            moments[m][k] = quad.values[4 * m + k];
            errors[m][k] = quad.errors[4 * m + k];
        }
    }
    Ok(ConditionalIntegrals { q, moments, errors, evaluations: quad.evaluations, cutoff, truncation_tail_bound: bound })
}

/// `p(k|q) = int_0^inf P(t, k|q) dt`.
pub fn channel_probability(
    k: Channel,
    q: Channel,
    state: &GaussianState,
    sp: &SingleParticleSet,
    opts: &QuadratureOptions,
) -> Result<QuadratureResult> {
    let ci = conditional_integrals(q, state, sp, opts)?;
    let i = k.index();
    Ok(QuadratureResult {
        value: ci.moments[0][i],
        abs_error_estimate: ci.errors[0][i] + ci.truncation_tail_bound,
        evaluations: ci.evaluations,
        truncation_tail_bound: ci.truncation_tail_bound,
        cutoff: ci.cutoff,
    })
}

/// Mean and variance of `P(t|k, q) = P(t, k|q) / p(k|q)`.
pub fn conditional_moments(
    k: Channel,
    q: Channel,
    state: &GaussianState,
    sp: &SingleParticleSet,
    opts: &QuadratureOptions,
) -> Result<(f64, f64)> {
    conditional_integrals(q, state, sp, opts)?.conditional_moments(k)
}

/// `sum_k p(k|q)`; should be 1 within [`AUDIT_TOL`].
pub fn normalization_audit(q: Channel, state: &GaussianState, sp: &SingleParticleSet, opts: &QuadratureOptions) -> Result<f64> {
    Ok(conditional_integrals(q, state, sp, opts)?.audit())
}

/// Normalized frequencies `p(q) ∝ tr J_q(rho)` of the four jumps.
pub fn jump_frequencies(state: &GaussianState, sp: &SingleParticleSet) -> Result<[f64; 4]> {
    let w = Channel::ALL.map(|q| jump_weight(q, state, sp));
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidState("no jump channel is active".into()));
    }
    Ok(w.map(|x| x / total))
}

fn require_steady(state: &GaussianState) -> Result<()> {
    if state.kind() != StateKind::Steady {
        return Err(Error::NotSteadyState);
    }
    Ok(())
}

/// NATD density `P(t) = sum_{k,q} P(t, k|q) p(q)`.
pub fn natd(t: f64, state: &GaussianState, sp: &SingleParticleSet) -> Result<f64> {
    require_steady(state)?;
    let pq = jump_frequencies(state, sp)?;
    natd_with(&Propagation::new(t, state, sp)?, &pq, state, sp)
}

fn natd_with(p: &Propagation, pq: &[f64; 4], state: &GaussianState, sp: &SingleParticleSet) -> Result<f64> {
    Ok(natd_point_with(p, pq, state, sp)?.value)
}

fn natd_point_with(p: &Propagation, pq: &[f64; 4], state: &GaussianState, sp: &SingleParticleSet) -> Result<WtdPoint> {
    let mut value = 0.0;
    let mut flag = WtdFlag::Ok;
    for q in Channel::ALL {
        if pq[q.index()] == 0.0 || !is_admissible(q, state, sp) {
            continue;
        }
        for k in Channel::ALL {
            let d = p.density(k, q)?;
            value += pq[q.index()] * d.value;
            flag = flag.max(d.flag);
        }
    }
    Ok(WtdPoint { t: p.t(), value, cond_estimate: p.cond_estimate(), flag })
}

/// NATD on every grid time, with the worst flag of its components.
pub fn natd_curve(state: &GaussianState, sp: &SingleParticleSet, grid: &TimeGrid) -> Result<Vec<WtdPoint>> {
    require_steady(state)?;
    let pq = jump_frequencies(state, sp)?;
    grid.times()
        .par_iter()
        .map(|&t| natd_point_with(&Propagation::new(t, state, sp)?, &pq, state, sp))
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NatdMoments {
    /// `int P(t) dt`, 1 up to quadrature error.
    pub integral: f64,
    pub mean: f64,
    pub variance: f64,
    pub cutoff: f64,
    pub truncation_tail_bound: f64,
    pub evaluations: usize,
}

/// Mean and variance of the NATD, integrating the mixture density itself.
pub fn natd_moments(state: &GaussianState, sp: &SingleParticleSet, opts: &QuadratureOptions) -> Result<NatdMoments> {
    require_steady(state)?;
    let pq = jump_frequencies(state, sp)?;
    let survival = |t: f64| -> Result<f64> {
        let p = Propagation::new(t, state, sp)?;
        let mut s = 0.0;
        for q in Channel::ALL {
            if pq[q.index()] > 0.0 && is_admissible(q, state, sp) {
                s += pq[q.index()] * p.survival(q)?;
            }
        }
        Ok(s)
    };
    let (cutoff, bound) = survival_cutoff(&survival, cutoff_seed(sp), opts)?;
    let integrand = |t: f64| -> Result<Vec<f64>> {
        let v = natd_with(&Propagation::new(t, state, sp)?, &pq, state, sp)?;
        Ok(vec![v, t * v, t * t * v])
    };
    let segments = (cutoff / feature_time(sp)).ceil() as usize;
    let quad = adaptive_vector(&integrand, 3, 0.0, cutoff, segments.max(MIN_SEGMENTS), opts.tol, opts.max_subdivisions)?;
    let mean = quad.values[1];
    Ok(NatdMoments {
        integral: quad.values[0],
        mean,
        variance: (quad.values[2] - mean * mean).max(0.0),
        cutoff,
        truncation_tail_bound: bound,
        evaluations: quad.evaluations,
    })
}

/// Every scalar statistic of one state, tables indexed `[k][q]`.
#[derive(Debug, Clone, Serialize)]
pub struct ChannelStats {
    pub p_kq: [[Option<f64>; 4]; 4],
    pub mean: [[Option<f64>; 4]; 4],
    pub variance: [[Option<f64>; 4]; 4],
    pub p_q: [f64; 4],
    pub natd_mean: Option<f64>,
    pub natd_variance: Option<f64>,
    /// `sum_k p(k|q)`, `None` for impossible `q`.
    pub normalization_audit: [Option<f64>; 4],
    pub cutoffs: [Option<f64>; 4],
}

impl ChannelStats {
    /// Channels whose audit misses 1 by more than `tol`.
    pub fn failed_audits(&self, tol: f64) -> Vec<Channel> {
        Channel::ALL
            .into_iter()
            .filter(|q| matches!(self.normalization_audit[q.index()], Some(a) if !((a - 1.0).abs() <= tol)))
            .collect()
    }
}

pub fn channel_stats(state: &GaussianState, sp: &SingleParticleSet, opts: &QuadratureOptions) -> Result<ChannelStats> {
    let per_q = Channel::ALL
        .par_iter()
        .map(|&q| if is_admissible(q, state, sp) { conditional_integrals(q, state, sp, opts).map(Some) } else { Ok(None) })
        .collect::<Result<Vec<_>>>()?;
    let mut out = ChannelStats {
        p_kq: [[None; 4]; 4],
        mean: [[None; 4]; 4],
        variance: [[None; 4]; 4],
        p_q: jump_frequencies(state, sp)?,
        natd_mean: None,
        natd_variance: None,
        normalization_audit: [None; 4],
        cutoffs: [None; 4],
    };
    for ci in per_q.into_iter().flatten() {
        let qi = ci.q.index();
        out.normalization_audit[qi] = Some(ci.audit());
        out.cutoffs[qi] = Some(ci.cutoff);
        for k in Channel::ALL {
            out.p_kq[k.index()][qi] = Some(ci.probability(k));
            if let Ok((m, v)) = ci.conditional_moments(k) {
                out.mean[k.index()][qi] = Some(m);
                out.variance[k.index()][qi] = Some(v);
            }
        }
    }
    if state.kind() == StateKind::Steady {
        let nm = natd_moments(state, sp, opts)?;
        out.natd_mean = Some(nm.mean);
        out.natd_variance = Some(nm.variance);
    }
    Ok(out)
}
