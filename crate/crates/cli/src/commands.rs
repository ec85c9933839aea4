//! Subcommand implementations. Each returns the paths it wrote.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use freewtd_core::chain::{derive_single_particle, steady_state, vacuum_state, Channel, GaussianState, Sign, SingleParticleSet};
use freewtd_core::error::Result as CoreResult;
use freewtd_core::oracle::{
    verify_tracedet, verify_wtd_equivalence, EquivalenceCheck, FockOracle, OracleLimit, TraceDetReport, MAX_ORACLE_SITES,
    MAX_ORACLE_SITES_EXTENDED,
};
use freewtd_core::stats::{channel_stats, natd_curve, QuadratureOptions, AUDIT_TOL};
use freewtd_core::wtd::{default_t_max, is_admissible, wtd_curve, wtd_density, TimeGrid, WtdPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{InitialState, RunConfig};
use crate::error::{CliError, CliResult};

/// Chain lengths timed by [`bench`].
pub const BENCH_LENGTHS: [usize; 4] = [10, 50, 100, 200];
/// Largest accepted log-log slope of time per point against `L`.
pub const BENCH_MAX_SLOPE: f64 = 3.5;
pub const VERIFY_TRACEDET_DRAWS: usize = 50;
pub const VERIFY_TIMES: usize = 10;

/// Density evaluator checked by [`verify`]. Returns `None` where the
/// conditioning jump is undefined for the state.
pub type Evaluator<'a> = dyn Fn(f64, Channel, Channel, &GaussianState, &SingleParticleSet) -> CoreResult<Option<f64>> + Sync + 'a;

/// The production evaluator. Extraction-conditioned vacuum densities are
/// reported as exact zeros; other impossible conditionings are undefined.
pub fn engine_evaluator(t: f64, k: Channel, q: Channel, state: &GaussianState, sp: &SingleParticleSet) -> CoreResult<Option<f64>> {
    let vacuum_extraction = state.lambda().is_some() && q.sign == Sign::Minus;
    if !is_admissible(q, state, sp) && !vacuum_extraction {
        return Ok(None);
    }
    Ok(Some(wtd_density(t, k, q, state, sp)?.value))
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn channel_slug(ch: Channel) -> String {
    ch.label().replace('-', "m").replace('+', "p")
}

fn provenance(command: &str, cfg: &RunConfig) -> String {
    let mut s = format!("# freewtd {command}\n");
    for line in cfg.to_toml().lines() {
        if line.is_empty() {
            s.push_str("#\n");
        } else {
            let _ = writeln!(s, "# {line}");
        }
    }
    s
}

fn state_for(cfg: &RunConfig, len: usize) -> CliResult<(GaussianState, SingleParticleSet)> {
    let spec = cfg.chain_spec(len)?;
    let sp = derive_single_particle(&spec);
    let state = match cfg.initial_state {
        InitialState::Steady => steady_state(&spec)?,
        InitialState::Vacuum => vacuum_state(len)?,
    };
    Ok((state, sp))
}

fn grid_for(cfg: &RunConfig, sp: &SingleParticleSet) -> CliResult<TimeGrid> {
    let t_max = match cfg.grid.t_max {
        Some(t) => t,
        None => default_t_max(sp)?,
    };
    Ok(TimeGrid::uniform(t_max, cfg.grid.points)?)
}

fn curve_csv(header: String, points: &[WtdPoint]) -> String {
    let mut s = header;
    s.push_str("t,density,flag\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.t, p.value, p.flag);
    }
    s
}

/// `wtd_<to>_<from>_L<L>.csv` for every configured chain length.
pub fn wtd(cfg: &RunConfig, to: Channel, from: Channel, out: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = vec![];
    for len in cfg.lengths() {
        let run = cfg.for_length(len);
        let (state, sp) = state_for(&run, len)?;
        let curve = wtd_curve(to, from, &state, &sp, &grid_for(&run, &sp)?)?;
        let path = out.join(format!("wtd_{}_{}_L{len}.csv", channel_slug(to), channel_slug(from)));
        let header = provenance(&format!("wtd --to {to} --from {from}"), &run);
        write_file(&path, &curve_csv(header, &curve.points))?;
        files.push(path);
    }
    Ok(files)
}

/// `natd_L<L>.csv`; needs `initial_state = "steady"`.
pub fn natd(cfg: &RunConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    if cfg.initial_state != InitialState::Steady {
        return Err(CliError::Validation("natd is defined for the steady state; set initial_state = \"steady\"".into()));
    }
    let mut files = vec![];
    for len in cfg.lengths() {
        let run = cfg.for_length(len);
        let (state, sp) = state_for(&run, len)?;
        let points = natd_curve(&state, &sp, &grid_for(&run, &sp)?)?;
        let path = out.join(format!("natd_L{len}.csv"));
        write_file(&path, &curve_csv(provenance("natd", &run), &points))?;
        files.push(path);
    }
    Ok(files)
}

/// `stats_L<L>.json`. Every file is written before audits are judged;
/// failures are an error unless `allow_audit_failure`, in which case they
/// come back as warnings.
pub fn stats(cfg: &RunConfig, out: &Path, allow_audit_failure: bool) -> CliResult<(Vec<PathBuf>, Vec<String>)> {
    let opts = QuadratureOptions { tol: cfg.tolerances.quadrature, ..QuadratureOptions::default() };
    let mut files = vec![];
    let mut failures = vec![];
    for len in cfg.lengths() {
        let run = cfg.for_length(len);
        let (state, sp) = state_for(&run, len)?;
        let s = channel_stats(&state, &sp, &opts)?;
        for q in s.failed_audits(AUDIT_TOL) {
            failures.push(format!(
                "L = {len}: sum_k p(k|{q}) = {:.12} misses 1 by more than {AUDIT_TOL:e}",
                s.normalization_audit[q.index()].unwrap_or(f64::NAN)
            ));
        }
        let doc = json!({
            "config": run,
            "channels": Channel::ALL.map(|c| c.label()),
            "p_kq": s.p_kq,
            "p_q": s.p_q,
            "mean": s.mean,
            "variance": s.variance,
            "natd_mean": s.natd_mean,
            "natd_variance": s.natd_variance,
            "normalization_audit": s.normalization_audit,
            "audit_tolerance": AUDIT_TOL,
            "cutoffs": s.cutoffs,
        });
        let path = out.join(format!("stats_L{len}.json"));
        write_file(&path, &(serde_json::to_string_pretty(&doc).expect("stats serialize") + "\n"))?;
        files.push(path);
    }
    if !failures.is_empty() && !allow_audit_failure {
        return Err(CliError::Audit(format!("normalization audit failed:\n  {}", failures.join("\n  "))));
    }
    Ok((files, failures))
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub seed: u64,
    pub tracedet: TraceDetReport,
    pub equivalence: Vec<EquivalenceCheck>,
    pub passed: bool,
}

impl VerifyOutcome {
    pub fn to_text(&self) -> String {
        let mut s = self.tracedet.to_text();
        s.push('\n');
        let _ = writeln!(s, "{:<28} {:>6} {:>12} {:>12}  result", "wtd equivalence", "points", "max abs", "max rel");
        for c in &self.equivalence {
            let _ = writeln!(
                s,
                "{:<28} {:>6} {:>12.3e} {:>12.3e}  {}",
                c.label,
                c.comparisons,
                c.max_abs_deviation,
                c.max_rel_deviation,
                if c.passed { "PASS" } else { "FAIL" }
            );
            if let (false, Some((t, k, q))) = (c.passed, &c.worst) {
                let _ = writeln!(s, "    worst at t = {t}, ({k}|{q}); {} failing points", c.failures);
            }
        }
        let _ = writeln!(s, "\noverall: {}", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}

/// Trace-determinant identities plus engine-vs-oracle equivalence for the
/// steady and vacuum states at each configured length. Writes
/// `verify.json`; a failed check is returned as [`CliError::Audit`] by the
/// caller after the report is written.
pub fn verify(cfg: &RunConfig, out: &Path, seed: u64, allow_large_oracle: bool, evaluator: &Evaluator) -> CliResult<(VerifyOutcome, PathBuf)> {
    let lengths = cfg.lengths();
    let limit = if allow_large_oracle { OracleLimit::Extended } else { OracleLimit::Standard };
    let max = if allow_large_oracle { MAX_ORACLE_SITES_EXTENDED } else { MAX_ORACLE_SITES };
    if let Some(&len) = lengths.iter().find(|&&l| l > max) {
        let hint = if len <= MAX_ORACLE_SITES_EXTENDED { "; pass --allow-large-oracle to allow L = 5" } else { "" };
        return Err(CliError::Validation(format!(
            "verify refuses L = {len}: the Fock-space oracle builds a 4^L x 4^L Liouvillian and is limited to L <= {max}{hint}"
        )));
    }

    let tracedet = verify_tracedet(seed, VERIFY_TRACEDET_DRAWS)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut equivalence = vec![];
    for len in lengths {
        let spec = cfg.chain_spec(len)?;
        let sp = derive_single_particle(&spec);
        let oracle = FockOracle::build(&spec, limit)?;
        let scale = default_t_max(&sp)? / 10.0;
        let times: Vec<f64> = (0..VERIFY_TIMES).map(|_| rng.random_range(0.0..=scale)).collect();
        let mut states = vec![];
        if spec.gamma1() > 0.0 && spec.gamma_l() > 0.0 {
            let steady = steady_state(&spec)?;
            let rho = oracle.gaussian_density(&steady)?;
            states.push(("steady", steady, rho));
        }
        states.push(("vacuum", vacuum_state(len)?, oracle.space().vacuum_density()));
        for (label, state, rho) in &states {
            let engine = |t: f64, k: Channel, q: Channel| evaluator(t, k, q, state, &sp);
            let check = verify_wtd_equivalence(&format!("L={len} {label}"), &oracle, rho, &times, cfg.tolerances.oracle, engine)?;
            equivalence.push(check);
        }
    }
    let passed = tracedet.passed() && equivalence.iter().all(|c| c.passed);
    let outcome = VerifyOutcome { seed, tracedet, equivalence, passed };
    let doc = json!({ "config": cfg, "report": outcome });
    let path = out.join("verify.json");
    write_file(&path, &(serde_json::to_string_pretty(&doc).expect("verify serialize") + "\n"))?;
    Ok((outcome, path))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutcome {
    pub lengths: Vec<usize>,
    pub seconds: Vec<f64>,
    pub slope: f64,
}

/// Best-of-three wall clock of one density point per chain length, with the
/// log-log slope of time against `L`. Uses the configured couplings and
/// baths on a tight-binding chain.
pub fn bench(cfg: &RunConfig, out: &Path) -> CliResult<(BenchOutcome, PathBuf)> {
    let mut seconds = vec![];
    for len in BENCH_LENGTHS {
        let mut run = cfg.for_length(len);
        if run.model.v.is_none() {
            run = RunConfig::default_config().for_length(len);
            run.baths = cfg.baths.clone();
            run.initial_state = cfg.initial_state;
        }
        let (state, sp) = state_for(&run, len)?;
        let q = Channel::ALL.into_iter().rev().find(|&q| is_admissible(q, &state, &sp)).unwrap_or(Channel::FIRST_PLUS);
        let t = default_t_max(&sp)? / 4.0;
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            let start = Instant::now();
            wtd_density(t, Channel::LAST_MINUS, q, &state, &sp)?;
            best = best.min(start.elapsed().as_secs_f64());
        }
        seconds.push(best);
    }
    let x: Vec<f64> = BENCH_LENGTHS.iter().map(|&l| (l as f64).ln()).collect();
    let y: Vec<f64> = seconds.iter().map(|s| s.ln()).collect();
    let slope = fit_slope(&x, &y);

    let mut csv = provenance("bench", cfg);
    let _ = writeln!(csv, "# log-log slope = {slope:.3}");
    csv.push_str("L,seconds\n");
    for (l, s) in BENCH_LENGTHS.iter().zip(&seconds) {
        let _ = writeln!(csv, "{l},{s:.6e}");
    }
    let path = out.join("bench.csv");
    write_file(&path, &csv)?;
    Ok((BenchOutcome { lengths: BENCH_LENGTHS.to_vec(), seconds, slope }, path))
}

fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
