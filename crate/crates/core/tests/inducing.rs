use std::sync::OnceLock;

use henon_thermo::cli::{induce, locate_a_star, Induced};
use henon_thermo::henon::MapParams;
use henon_thermo::inducing::{branch_census, hyperbolicity_audit};
use henon_thermo::manifolds::{quadratic_signature, DEFAULT_BRACKET};
use henon_thermo::thermo::{pressure_at, ShiftData, DEFAULT_CUTOFFS};

fn desk() -> &'static Induced {
    static CELL: OnceLock<Induced> = OnceLock::new();
    CELL.get_or_init(|| {
        let tmpl = MapParams::desk(2.0, 1e-4).unwrap();
        let (_, refined) = locate_a_star(&tmpl, DEFAULT_BRACKET, 1e-15).unwrap();
        induce(&tmpl.with_a(refined.a_star), 40).unwrap()
    })
}

#[test]
fn two_branches_per_return_time() {
    let sys = &desk().system;
    assert_eq!(sys.branches.len(), 42);
    for n in 2..=22 {
        assert_eq!(sys.counts[n], 2, "S({n})");
    }
    assert_eq!(sys.branches.iter().filter(|b| b.tau == 2).count(), 2);
    assert!(sys.branches.iter().all(|b| b.first_return));
    assert!(sys.omega_consistent);
}

#[test]
fn branch_domains_are_disjoint() {
    let sys = &desk().system;
    let mut dom: Vec<(f64, f64)> = sys.branches.iter().map(|b| (b.x_lo, b.x_hi)).collect();
    dom.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(dom.iter().all(|d| d.0 < d.1));
    assert!(dom.windows(2).all(|w| w[0].1 <= w[1].0));
    assert!(sys.disjoint());
    // the core sits between the branches, around the tangency
    let zeta = desk().geo.zeta0.x;
    assert!(sys.core.0 < zeta && zeta < sys.core.1);
    assert!(dom.iter().all(|d| d.1 <= sys.core.0 || d.0 >= sys.core.1));
}

#[test]
fn growth_rate_of_two_branches_per_level() {
    let census = branch_census(&desk().system, 10);
    // S(n) = 2 on [10, 22], so the maximum of log S(n) / n is at n = 10
    assert!((census.growth_rate - 2f64.ln() / 10.0).abs() < 1e-15);
    assert!(census.growth_rate <= desk().system.params.epsilon);
}

#[test]
fn derivative_envelope_holds() {
    let d = desk();
    let audit = hyperbolicity_audit(&d.geo, &d.system, 16);
    assert!(audit.violations.is_empty(), "{:?}", audit.violations);
    assert!(audit.c_dist.is_finite() && audit.c_dist > 0.0);
    assert!(audit.saddle_in_envelope);
}

#[test]
fn nested_towers() {
    let d = desk();
    assert!(d.tower.nested());
    assert!(d.omega.nested());
    let checks = d.alpha.checks(&d.geo);
    assert!(checks.accumulating && checks.tilde_monotone, "{checks:?}");
}

#[test]
fn weights_leave_a_hole() {
    let sys = &desk().system;
    let mass: f64 = sys.branches.iter().map(|b| (-b.log_weight).exp()).sum();
    assert!(mass < 1.0 && mass > 0.999, "{mass}");
}

#[test]
fn entropy_anchor() {
    let sys = &desk().system;
    let data = ShiftData::from_system(sys, branch_census(sys, 10).growth_rate);
    let p0 = pressure_at(&data, 0.0, &DEFAULT_CUTOFFS).unwrap();
    assert!((p0.value - 2f64.ln()).abs() < 0.05 * 2f64.ln(), "{p0:?}");
    assert!(pressure_at(&data, 1.0, &DEFAULT_CUTOFFS).unwrap().value < 0.0);
}

#[test]
fn tangency_is_quadratic() {
    let p = desk().system.params;
    let q = quadratic_signature(&p, 0.5 * p.sqrt_b(), 41).unwrap();
    assert!(q.alpha.abs() < 1e-6, "{}", q.alpha);
    assert!(q.rel_residual < 0.05, "{}", q.rel_residual);
    assert!(q.beta > 0.0);
}
