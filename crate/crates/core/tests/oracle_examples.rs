use approx::assert_relative_eq;
use freewtd_core::chain::{derive_single_particle, steady_state, vacuum_state, vacuum_state_with, ChainSpec, Channel, GaussianState};
use freewtd_core::oracle::{FockOracle, OracleLimit};
use freewtd_core::stats::{conditional_integrals, integrate_semiinfinite, Cutoff, QuadratureOptions, TailBound};
use freewtd_core::wtd::{is_admissible, wtd_density, wtd_table};

fn section_v(len: usize) -> ChainSpec {
    ChainSpec::tight_binding(len, 1.0, 1.0, 0.1, 0.1, 1.0, 0.0).unwrap()
}

/// `(T + 1/r) e^{-r T} / r`-type bound for the fixed-cutoff oracle integrals.
struct Decay(f64);

impl TailBound for Decay {
    fn tail(&self, t: f64) -> f64 {
        (t * t + 2.0 * t / self.0 + 2.0 / (self.0 * self.0)) * (-self.0 * t).exp()
    }
    fn scale(&self) -> f64 {
        1.0 / self.0
    }
}

fn oracle_opts() -> QuadratureOptions {
    QuadratureOptions { cutoff: Cutoff::Fixed(800.0), ..Default::default() }
}

#[test]
fn sixteen_entry_table_at_unit_time() {
    let spec = section_v(2);
    let sp = derive_single_particle(&spec);
    let st = steady_state(&spec).unwrap();
    let oracle = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
    let rho = oracle.gaussian_density(&st).unwrap();
    let want = oracle.wtd_table(1.0, &rho).unwrap();
    let got = wtd_table(1.0, &st, &sp).unwrap();
    for (k, (want_row, got_row)) in want.iter().zip(&got.entries).enumerate() {
        for (q, pair) in want_row.iter().zip(got_row).enumerate() {
            match pair {
                (Some(w), Some(g)) => assert!((w - g.value).abs() <= 1e-12 || (w - g.value).abs() <= 1e-8 * w.abs()),
                (None, None) => {}
                other => panic!("admissibility mismatch at [{k}][{q}]: {other:?}"),
            }
        }
    }
}

#[test]
fn transfer_density_matches_oracle() {
    let spec = section_v(2);
    let sp = derive_single_particle(&spec);
    let st = steady_state(&spec).unwrap();
    let oracle = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
    let rho = oracle.steady_state().unwrap();
    for t in [0.5, 1.0, 2.0] {
        let want = oracle.wtd(t, Channel::LAST_MINUS, Channel::FIRST_PLUS, &rho).unwrap();
        let got = wtd_density(t, Channel::LAST_MINUS, Channel::FIRST_PLUS, &st, &sp).unwrap().value;
        assert_relative_eq!(got, want, max_relative = 1e-8);
    }
}

#[test]
fn vacuum_matches_oracle_and_regularized_state() {
    let spec = section_v(2);
    let sp = derive_single_particle(&spec);
    let oracle = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
    let rho = oracle.space().vacuum_density();
    let vac = vacuum_state(2).unwrap();
    let regularized = GaussianState::custom(vacuum_state_with(2, 1e-10).unwrap().covariance().clone()).unwrap();
    for t in [0.3, 1.0, 4.0, 12.0] {
        for k in Channel::ALL {
            let q = Channel::FIRST_PLUS;
            let got = wtd_density(t, k, q, &vac, &sp).unwrap().value;
            let want = oracle.wtd(t, k, q, &rho).unwrap();
            assert!((got - want).abs() <= 1e-12 || (got - want).abs() <= 1e-8 * want.abs(), "{t} {k}: {got} vs {want}");
            let general = wtd_density(t, k, q, &regularized, &sp).unwrap().value;
            assert!((general - got).abs() <= 1e-6 * got.abs().max(1e-12), "{t} {k}: {general} vs {got}");
        }
    }
}

#[test]
fn probability_and_mean_match_integrated_oracle() {
    let spec = section_v(2);
    let sp = derive_single_particle(&spec);
    let st = steady_state(&spec).unwrap();
    let oracle = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
    let rho = oracle.steady_state().unwrap();
    let (k, q) = (Channel::LAST_MINUS, Channel::FIRST_PLUS);
    let f = |t: f64| oracle.wtd(t, k, q, &rho).unwrap();
    let p = integrate_semiinfinite(f, &Decay(0.1), &oracle_opts()).unwrap().value;
    let m1 = integrate_semiinfinite(|t| t * f(t), &Decay(0.1), &oracle_opts()).unwrap().value;

    let ci = conditional_integrals(q, &st, &sp, &QuadratureOptions::default()).unwrap();
    assert_relative_eq!(ci.probability(k), p, max_relative = 1e-6);
    let (mean, _) = ci.conditional_moments(k).unwrap();
    assert_relative_eq!(mean, m1 / p, max_relative = 1e-6);
}

#[test]
fn oracle_densities_are_normalized() {
    let spec = section_v(2);
    let oracle = FockOracle::build(&spec, OracleLimit::Standard).unwrap();
    let rho = oracle.steady_state().unwrap();
    let sp = derive_single_particle(&spec);
    let st = steady_state(&spec).unwrap();
    for q in Channel::ALL {
        if !is_admissible(q, &st, &sp) {
            continue;
        }
        let total = |t: f64| Channel::ALL.iter().map(|&k| oracle.wtd(t, k, q, &rho).unwrap()).sum::<f64>();
        let r = integrate_semiinfinite(total, &Decay(0.1), &oracle_opts()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-6, "{q}: {}", r.value);
    }
}

#[test]
fn five_site_oracle_needs_extended_limit() {
    let spec = section_v(5);
    assert!(FockOracle::build(&spec, OracleLimit::Standard).is_err());
}
