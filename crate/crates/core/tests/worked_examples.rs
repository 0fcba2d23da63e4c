mod common;

use common::checks;
use unimech::constraints::{lie_apply, split_projectable, Provenance};
use unimech::symbolic::{parse_expr, SamplingPolicy};

#[test]
fn pais_uhlenbeck_reproduction() {
    checks::pais_uhlenbeck_reproduction().unwrap();
}

#[test]
fn relativistic_constraint_chain() {
    checks::relativistic_chain().unwrap();
}

#[test]
fn momentum_recursion_on_random_lagrangians() {
    checks::momentum_recursion(50).unwrap();
}

#[test]
fn legendre_pullbacks() {
    checks::pullbacks().unwrap();
}

#[test]
fn unified_and_lagrangian_equations_agree() {
    checks::unified_lagrangian_equivalence().unwrap();
}

#[test]
fn hessian_classification() {
    checks::hessian_classification().unwrap();
}

#[test]
fn relativistic_first_tangencies() {
    let (u, primary, ledger) = checks::relativistic_ledger(SamplingPolicy::default()).unwrap();
    let c = u.chart().clone();
    let x = ledger.field.clone();
    let (proj, _) = split_projectable(&c, &lie_apply(&x, &primary[0]));
    assert_eq!(proj, parse_expr("-dot(p0,q1)", &c).unwrap());
    let (proj, _) = split_projectable(&c, &lie_apply(&x, &primary[1]));
    assert_eq!(proj, parse_expr("-2*dot(p0,p1)", &c).unwrap());
    let from = |label: &str| ledger.entries().find(|e| e.label == label).unwrap().derived_from.clone();
    assert_eq!(from("phi(1)_1").as_deref(), Some("phi(0)_1"));
    assert_eq!(from("phi(1)_2").as_deref(), Some("phi(0)_2"));
    assert_eq!(from("phi(2)").as_deref(), Some("phi(1)_2"));
    assert!(ledger.entries().filter(|e| e.provenance == Provenance::GraphPrimary).count() == 6);
}

#[test]
fn relativistic_constraints_are_projectable() {
    let (u, _, ledger) = checks::relativistic_ledger(SamplingPolicy::default()).unwrap();
    for (_, e) in ledger.non_graph() {
        assert!(unimech::constraints::is_projectable(u.chart(), &e.expr), "{}", e.label);
    }
}

#[test]
fn constraint_ledger_is_deterministic() {
    let a = checks::relativistic_ledger(SamplingPolicy::default()).unwrap().2;
    let b = checks::relativistic_ledger(SamplingPolicy::default()).unwrap().2;
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn ledger_is_stable_under_another_seed() {
    let policy = SamplingPolicy { seed: 7, ..SamplingPolicy::default() };
    let (_, _, ledger) = checks::relativistic_ledger(policy).unwrap();
    assert_eq!(ledger.non_graph().len(), 5);
}

#[test]
fn free_particle_has_no_secondaries() {
    let sys = common::load_system("free_particle.lag");
    let u = unimech::unified::UnifiedSystem::new(&sys);
    let ledger = unimech::constraints::run_algorithm(&u, &[], &Default::default()).unwrap();
    assert_eq!(ledger.status, unimech::constraints::LedgerStatus::Stabilized);
    assert!(ledger.non_graph().is_empty());
    assert!(ledger.free_unknowns.is_empty());
}
