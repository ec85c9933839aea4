//! Randomized checks of the single-particle formulas against Fock space.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::fock::{trace_product, FockSpace, OracleLimit};
use super::liouvillian::FockOracle;
use crate::chain::Channel;
use crate::error::Result;
use crate::matrix::{expm, identity, lu_logdet, max_abs, CMatrix, Lu};
use crate::tracedet::{
    bss_trace, det_and_propagator, lemmas, trace_one_insert, trace_one_insert_alpha, trace_two_insert, ExpFactor,
    InsertIndices, QuadraticFormChain, TwoInsertKind,
};

pub const TRACEDET_TOLERANCE: f64 = 1e-9;
pub const TRACEDET_SIZES: [usize; 2] = [2, 3];
pub const ALPHAS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub identity: String,
    pub draws: usize,
    pub evaluations: usize,
    pub max_deviation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceDetReport {
    pub seed: u64,
    pub draws: usize,
    pub sizes: Vec<usize>,
    pub tolerance: f64,
    pub checks: Vec<IdentityCheck>,
}

impl TraceDetReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<22} {:>6} {:>8} {:>14}  result", "identity", "draws", "evals", "max deviation");
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<22} {:>6} {:>8} {:>14.3e}  {}",
                c.identity,
                c.draws,
                c.evaluations,
                c.max_deviation,
                if c.passed { "pass" } else { "FAIL" }
            );
        }
        s
    }
}

#[derive(Default)]
struct Tally {
    draws: usize,
    evaluations: usize,
    max_deviation: f64,
}

impl Tally {
    fn record(&mut self, dev: f64) {
        self.evaluations += 1;
        // NaN must not pass silently
        self.max_deviation = if dev.is_nan() { f64::INFINITY } else { self.max_deviation.max(dev) };
    }
}

fn random_generator(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    Array2::from_shape_fn((n, n), |_| {
        let r: f64 = rng.random_range(0.0..=1.0);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        C64::from_polar(r, theta)
    })
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Array1<C64> {
    Array1::from_shape_fn(n, |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

/// `tr(ops[0] ops[1] ...)`.
fn fock_trace(ops: &[&CMatrix]) -> C64 {
    let mut p = ops[0].clone();
    for op in &ops[1..ops.len() - 1] {
        p = p.dot(*op);
    }
    trace_product(&p, ops[ops.len() - 1])
}

/// Inserted operators `(a b, c_j-side, c_j'-side)` of a two-insertion
/// trace, matching [`TwoInsertKind`].
fn two_insert_operators(kind: TwoInsertKind, idx: InsertIndices, space: &FockSpace) -> (CMatrix, CMatrix, CMatrix) {
    let InsertIndices { i, ip, j, jp } = idx;
    let (a, b, cj, cjp) = match kind {
        TwoInsertKind::Adjacent | TwoInsertKind::SplitMp => (space.c_dag(i), space.c(ip).clone(), space.c_dag(j), space.c(jp).clone()),
        TwoInsertKind::SplitPp => (space.c(i).clone(), space.c_dag(ip), space.c_dag(j), space.c(jp).clone()),
        TwoInsertKind::SplitMm => (space.c_dag(i), space.c(ip).clone(), space.c(j).clone(), space.c_dag(jp)),
        TwoInsertKind::SplitPm => (space.c(i).clone(), space.c_dag(ip), space.c(j).clone(), space.c_dag(jp)),
    };
    (a.dot(&b), cj, cjp)
}

/// Compare every trace-determinant identity with its Fock-space
/// counterpart for `draws` random `X, Y, Z` per chain length in `sizes`.
///
/// Deviations are measured relative to `max(1, |tr e^X e^Y e^Z|)`, the
/// natural magnitude of all traces in one draw.
pub fn verify_tracedet_with(seed: u64, draws: usize, sizes: &[usize]) -> Result<TraceDetReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "trace-det",
        "single insertion",
        "adjacent",
        "split_mp",
        "split_pp",
        "split_mm",
        "split_pm",
        "conjugation",
        "alpha independence",
        "rank-one determinant",
        "rank-one inverse",
    ];
    let mut tallies: Vec<Tally> = names.iter().map(|_| Tally::default()).collect();

    for &n in sizes {
        let space = FockSpace::new(n, OracleLimit::Standard)?;
        for _ in 0..draws {
            let gens = [random_generator(n, &mut rng), random_generator(n, &mut rng), random_generator(n, &mut rng)];
            let many: Vec<CMatrix> =
                gens.iter().map(|g| expm(&space.quadratic_form(g)?)).collect::<Result<_>>()?;
            let factors: Vec<ExpFactor> = gens.iter().map(ExpFactor::from_generator).collect::<Result<_>>()?;
            let chain = QuadraticFormChain::new(factors.clone())?;
            let [x, y, z] = [&factors[0], &factors[1], &factors[2]];

            let lhs = fock_trace(&[&many[0], &many[1], &many[2]]);
            let rhs = bss_trace(&chain)?.value();
            let scale = lhs.norm().max(1.0);
            tallies[0].record((lhs - rhs).norm() / scale);

            for i in 0..n {
                for ip in 0..n {
                    let op = space.c_dag(i).dot(space.c(ip));
                    let lhs = fock_trace(&[&op, &many[0], &many[1], &many[2]]);
                    let rhs = trace_one_insert(i, ip, &chain)?;
                    tallies[1].record((lhs - rhs).norm() / scale);
                    for alpha in ALPHAS {
                        let v = trace_one_insert_alpha(i, ip, &chain, alpha)?;
                        tallies[8].record((v - rhs).norm() / scale);
                    }
                }
            }

            for (slot, kind) in TwoInsertKind::ALL.iter().enumerate() {
                for flat in 0..n.pow(4) {
                    let idx = InsertIndices { i: flat % n, ip: (flat / n) % n, j: (flat / n / n) % n, jp: flat / n / n / n };
                    let (pair, cj, cjp) = two_insert_operators(*kind, idx, &space);
                    let lhs = if *kind == TwoInsertKind::Adjacent {
                        fock_trace(&[&pair, &many[0], &cj.dot(&cjp), &many[1], &many[2]])
                    } else {
                        fock_trace(&[&pair, &many[0], &cj, &many[1], &cjp, &many[2]])
                    };
                    let rhs = trace_two_insert(*kind, idx, x, y, z)?;
                    tallies[2 + slot].record((lhs - rhs).norm() / scale);
                }
            }

            let t = det_and_propagator(&chain)?.t;
            let left = x.exp_inv().dot(&t).dot(z.exp_inv()).dot(y.exp_inv());
            let right = identity(n) - x.exp_inv().dot(&t).dot(x.exp());
            tallies[7].record(max_abs(&(left - right)));

            let a = random_generator(n, &mut rng) + identity(n).mapv(|v| v * 2.0);
            let psi = random_vector(n, &mut rng);
            let phi = random_vector(n, &mut rng);
            let updated = lemmas::rank_one_update(&a, &psi, &phi);
            let direct = lu_logdet(&updated)?.1.value();
            let via = lemmas::sylvester_det(&a, &psi, &phi)?.value();
            tallies[9].record((direct - via).norm() / direct.norm().max(1.0));
            let inv = Lu::new(&updated)?.solve(&identity(n))?;
            let sm = lemmas::sherman_morrison(&a, &psi, &phi)?;
            tallies[10].record(max_abs(&(inv - &sm)) / max_abs(&sm).max(1.0));

            for t in tallies.iter_mut() {
                t.draws += 1;
            }
        }
    }

    let checks = names
        .iter()
        .zip(tallies)
        .map(|(name, t)| IdentityCheck {
            identity: name.to_string(),
            draws: t.draws,
            evaluations: t.evaluations,
            max_deviation: t.max_deviation,
            passed: t.max_deviation <= TRACEDET_TOLERANCE,
        })
        .collect();
    Ok(TraceDetReport { seed, draws, sizes: sizes.to_vec(), tolerance: TRACEDET_TOLERANCE, checks })
}

pub fn verify_tracedet(seed: u64, draws: usize) -> Result<TraceDetReport> {
    verify_tracedet_with(seed, draws, &TRACEDET_SIZES)
}

/// Relative tolerance of the closed-form vs oracle comparison.
pub const WTD_REL_TOL: f64 = 1e-8;
/// Absolute floor for densities that are essentially zero.
pub const WTD_ABS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceCheck {
    pub label: String,
    pub comparisons: usize,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
    pub failures: usize,
    /// `(t, k, q)` of the worst comparison.
    pub worst: Option<(f64, String, String)>,
    pub passed: bool,
}

/// Evaluate `engine(t, k, q)` for all sixteen pairs at every `t` and
/// compare with the oracle for density matrix `rho`. A value passes when
/// it is within `rel_tol` relative or [`WTD_ABS_TOL`] absolute.
///
/// `engine` returns `None` for pairs it considers undefined. Where the
/// oracle says the conditioning jump is impossible, the engine must return
/// `None` or exactly zero.
pub fn verify_wtd_equivalence<F>(
    label: &str,
    oracle: &FockOracle,
    rho: &CMatrix,
    times: &[f64],
    rel_tol: f64,
    engine: F,
) -> Result<EquivalenceCheck>
where
    F: Fn(f64, Channel, Channel) -> Result<Option<f64>>,
{
    let mut out = EquivalenceCheck {
        label: label.to_string(),
        comparisons: 0,
        max_abs_deviation: 0.0,
        max_rel_deviation: 0.0,
        failures: 0,
        worst: None,
        passed: false,
    };
    let mut worst_ratio = -1.0;
    for &t in times {
        let table = oracle.wtd_table(t, rho)?;
        for q in Channel::ALL {
            for k in Channel::ALL {
                let got = engine(t, k, q)?;
                out.comparisons += 1;
                let (abs_dev, rel_dev, ok) = match (table[k.index()][q.index()], got) {
                    (None, None) | (None, Some(0.0)) => (0.0, 0.0, true),
                    (None, Some(v)) => (v.abs(), f64::INFINITY, false),
                    (Some(_), None) => (f64::INFINITY, f64::INFINITY, false),
                    (Some(want), Some(v)) => {
                        let d = (v - want).abs();
                        let rel = if want.abs() > 0.0 { d / want.abs() } else { f64::INFINITY };
                        (d, rel, d <= WTD_ABS_TOL || rel <= rel_tol)
                    }
                };
                let abs_dev = if abs_dev.is_nan() { f64::INFINITY } else { abs_dev };
                if !ok {
                    out.failures += 1;
                }
                out.max_abs_deviation = out.max_abs_deviation.max(abs_dev);
                // relative error is only meaningful away from zero
                let near_zero = matches!(table[k.index()][q.index()], Some(w) if w.abs() <= WTD_ABS_TOL);
                if !near_zero {
                    out.max_rel_deviation = out.max_rel_deviation.max(if ok { rel_dev.min(1.0) } else { rel_dev });
                }
                let ratio = (abs_dev / WTD_ABS_TOL).min(rel_dev / rel_tol);
                if ratio > worst_ratio {
                    worst_ratio = ratio;
                    out.worst = Some((t, k.label().to_string(), q.label().to_string()));
                }
            }
        }
    }
    out.passed = out.failures == 0;
    Ok(out)
}
