//! One function per acceptance criterion. `Ok` carries a short summary,
//! `Err` the reason for failure.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng;

use unimech::constraints::{run_algorithm, ConstraintLedger, ConstraintPolicy, LedgerStatus, Surface};
use unimech::dynamics::{conserved, holonomy_defects, integrate, IntegratorSettings, NumericField, Space};
use unimech::forms::DifferentialForm;
use unimech::jetcalc::{tulczyjew, HessianVerdict, LagrangianSystem};
use unimech::symbolic::zero::below_tol;
use unimech::symbolic::{parse_expr, ChartSpec, Compiled, Expr, NumericPoint, SamplingPolicy, Symbol, UnknownKind};
use unimech::unified::{canonical_omega, canonical_theta, UnifiedSystem};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ex(s: &str, c: &ChartSpec) -> Expr {
    parse_expr(s, c).unwrap()
}

fn expect_eq(what: &str, got: &Expr, want: &str, c: &ChartSpec) -> Result<(), String> {
    let w = ex(want, c);
    ensure!(got == &w, "{what}: got {got}, expected {w}");
    Ok(())
}

pub fn pais_uhlenbeck_reproduction() -> Check {
    let start = Instant::now();
    let src = super::load("pais_uhlenbeck.lag");
    let c = src.chart.clone();
    let sys = LagrangianSystem::new(c.clone(), src.lagrangian).map_err(|e| e.to_string())?;
    expect_eq("p0", sys.momentum(0, 0), "q1 + g*q3", &c)?;
    expect_eq("p1", sys.momentum(1, 0), "-g*q2", &c)?;
    let u = UnifiedSystem::new(&sys);
    expect_eq("H", u.hamiltonian(), "p0*q1 + p1*q2 - 1/2*(q1^2 - w^2*q0^2 - g*q2^2)", &c)?;
    let sol = u.solve_coefficients();
    let id = |kind, i| sol.identifications.get(&c.unknown(kind, i, 0)).cloned().unwrap_or_else(Expr::zero);
    expect_eq("f0", &id(UnknownKind::LowF, 0), "q1", &c)?;
    expect_eq("f1", &id(UnknownKind::LowF, 1), "q2", &c)?;
    expect_eq("G0", &id(UnknownKind::G, 0), "-w^2*q0", &c)?;
    expect_eq("G1", &id(UnknownKind::G, 1), "q1 - p0", &c)?;
    ensure!(sol.constraints == vec![ex("p1 + g*q2", &c)], "graph relation: {:?}", sol.constraints);
    let x = u.ansatz().substitute(&sol.identifications);
    let tangency = u.tangency_system(&x);
    ensure!(
        tangency == vec![ex("-w^2*q0 - q2 - g*F3", &c), ex("g*(F2 - q3)", &c)],
        "tangency: {tangency:?}"
    );
    let hessian = sys.hessian(&SamplingPolicy::default());
    let solved = u.solve_regular(&hessian).map_err(|e| e.to_string())?;
    let want_x = [
        ("q0", "q1"),
        ("q1", "q2"),
        ("q2", "q3"),
        ("q3", "-(w^2*q0 + q2)/g"),
        ("p0", "-w^2*q0"),
        ("p1", "q1 - p0"),
    ];
    for (s, v) in want_x {
        let sym = ex(s, &c).free_symbols().into_iter().next().unwrap();
        expect_eq(&format!("X along {s}"), &solved.get(&sym), v, &c)?;
    }
    let xl = u.recover_lagrangian_field(&solved);
    ensure!(xl.components().count() == 4, "X_L has components off T^3Q");
    for (s, v) in &want_x[..4] {
        let sym = ex(s, &c).free_symbols().into_iter().next().unwrap();
        expect_eq(&format!("X_L along {s}"), &xl.get(&sym), v, &c)?;
    }
    let xh = u.recover_hamiltonian_field(&xl).map_err(|e| e.to_string())?;
    ensure!(xh.verified, "X_h does not satisfy Hamilton's equation");
    // q2 is -p1/g on the image of FL
    for (s, v) in [("q0", "q1"), ("q1", "-p1/g"), ("p0", "-w^2*q0"), ("p1", "q1 - p0")] {
        let sym = ex(s, &c).free_symbols().into_iter().next().unwrap();
        expect_eq(&format!("X_h along {s}"), &xh.field.get(&sym), v, &c)?;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("momenta, coefficients, tangency, X, X_L, X_h exact in {elapsed:.2?}"))
}

pub fn relativistic_ledger(sampling: SamplingPolicy) -> Result<(UnifiedSystem, Vec<Expr>, ConstraintLedger), String> {
    let src = super::load("relativistic_particle.lag");
    let sys = LagrangianSystem::new(src.chart, src.lagrangian).map_err(|e| e.to_string())?;
    let u = UnifiedSystem::new(&sys);
    let policy = ConstraintPolicy { semispray1: true, sampling, ..ConstraintPolicy::default() };
    let ledger = run_algorithm(&u, &src.primary, &policy).map_err(|e| e.to_string())?;
    Ok((u, src.primary, ledger))
}

pub fn relativistic_chain() -> Check {
    let start = Instant::now();
    let (u, _, ledger) = relativistic_ledger(SamplingPolicy::default())?;
    let c = u.chart().clone();
    ensure!(c.n == 3, "expected n = 3, got {}", c.n);
    let expected = [
        (0, "dot(p1,q1)"),
        (0, "dot(p1,p1) - al^2/dot(q1,q1)"),
        (1, "dot(p0,q1)"),
        (1, "dot(p0,p1)"),
        (2, "dot(p0,p0)"),
    ];
    let found = ledger.non_graph();
    ensure!(found.len() == expected.len(), "ledger has {} non-graph constraints: {:?}", found.len(),
        found.iter().map(|(g, e)| format!("{g}:{}", e.expr)).collect::<Vec<_>>());
    for ((g, entry), (want_g, want)) in found.iter().zip(expected) {
        let w = ex(want, &c);
        ensure!(*g == want_g, "{} is in generation {g}, expected {want_g}", entry.label);
        ensure!(entry.expr.rational_multiple_of(&w).is_some(), "{}: got {}, expected a multiple of {w}", entry.label, entry.expr);
    }
    ensure!(ledger.status == LedgerStatus::Stabilized, "status {:?}", ledger.status);
    ensure!(ledger.generations.len() == 3, "stabilized after {} generations", ledger.generations.len());
    ensure!(ledger.restricted_hamiltonian.is_zero(), "H on the final surface is {}", ledger.restricted_hamiltonian);
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("generations (0,0,1,1,2), stabilized, H_o = 0 in {elapsed:.2?}"))
}

pub fn momentum_recursion(count: usize) -> Check {
    let mut rng = super::rng(0x0575);
    for case in 0..count {
        let (c, l) = super::random_polynomial_lagrangian(&mut rng);
        let sys = LagrangianSystem::new(c.clone(), l.clone()).map_err(|e| e.to_string())?;
        for a in 0..c.n {
            ensure!(sys.momentum(c.k - 1, a) == &l.diff(&c.q(c.k, a)), "case {case}: top momentum of {l}");
            for r in 1..c.k {
                let rhs = l.diff(&c.q(r, a)) - tulczyjew(sys.momentum(r, a)).map_err(|e| e.to_string())?;
                let d = sys.momentum(r - 1, a) - &rhs;
                ensure!(d.is_zero(), "case {case}: recursion residual {d} for L = {l}");
            }
        }
    }
    Ok(format!("{count} random Lagrangians"))
}

pub fn pullbacks() -> Check {
    let mut done = Vec::new();
    for file in ["pais_uhlenbeck.lag", "relativistic_particle.lag", "free_particle.lag"] {
        let sys = super::load_system(file);
        let fl = sys.legendre_map();
        let theta = canonical_theta(sys.chart()).pullback(&fl).map_err(|e| e.to_string())?;
        let omega = canonical_omega(sys.chart()).pullback(&fl).map_err(|e| e.to_string())?;
        ensure!(&theta == sys.theta(), "{file}: FL*theta differs from theta_L by {}", theta.sub(sys.theta()));
        ensure!(&omega == sys.omega(), "{file}: FL*omega differs from omega_L by {}", omega.sub(sys.omega()));
        done.push(file.trim_end_matches(".lag"));
    }
    Ok(format!("canonical equality for {}", done.join(", ")))
}

/// Largest scaled coefficient of `form` at on-surface points, with the
/// field's free coefficients closed by `field`.
fn form_residual_on_surface(
    form: &DifferentialForm,
    field: &NumericField,
    coords: &[Symbol],
    params: &[Symbol],
    points: &[Vec<f64>],
    tol: f64,
) -> Result<usize, String> {
    let inputs: Vec<Symbol> = coords.iter().chain(params).chain(field.unknown_symbols()).cloned().collect();
    let coeffs: Vec<Compiled> = form
        .terms()
        .map(|(_, e)| Compiled::new(e, &inputs).map_err(|err| err.to_string()))
        .collect::<Result<_, _>>()?;
    let mut bad = 0;
    for pt in points {
        let (state, pvals) = pt.split_at(coords.len());
        // the field was compiled with the same parameter values
        let input = field.closed_input(state).map_err(|e| e.to_string())?;
        debug_assert_eq!(&input[coords.len()..coords.len() + pvals.len()], pvals);
        for c in &coeffs {
            let (v, scale) = c.eval_scaled(&input).map_err(|e| e.to_string())?;
            if !below_tol(v, scale, tol) {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

pub fn unified_lagrangian_equivalence() -> Check {
    // symbolic for the regular oscillator
    let sys = super::load_system("pais_uhlenbeck.lag");
    let u = UnifiedSystem::new(&sys);
    let x = u.solve_regular(&sys.hessian(&SamplingPolicy::default())).map_err(|e| e.to_string())?;
    let xl = u.recover_lagrangian_field(&x);
    let residual = sys.omega().interior(&xl).sub(&DifferentialForm::d_function(sys.energy()));
    ensure!(residual.is_zero(), "PU residual {residual}");

    // numeric on the final surface for the relativistic particle
    let policy = SamplingPolicy::default();
    let (u, _, ledger) = relativistic_ledger(policy.clone())?;
    let sys = u.system();
    let c = sys.chart().clone();
    let xl = u.recover_lagrangian_field(&ledger.field);
    let residual = sys.omega().interior(&xl).sub(&DifferentialForm::d_function(sys.energy()));
    let coords = c.lagrangian_coords();
    let params = c.param_symbols();
    let surface = Surface::new(coords.clone(), params.clone(), &ledger.surface).map_err(|e| e.to_string())?;
    let mut rng = policy.rng();
    // one parameter draw shared by every sample, matching the compiled field
    let pvals = policy.random_values(params.len(), &mut rng);
    let pmap: BTreeMap<String, f64> = params.iter().map(|p| p.to_string()).zip(pvals.iter().copied()).collect();
    let field = NumericField::with_equations(&xl, &coords, &pmap, &ledger.tangency_equations).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    while points.len() < policy.samples {
        let seed = policy.random_values(coords.len(), &mut rng);
        if let Some(x) = surface.project(&seed, &pvals) {
            points.push(x.into_iter().chain(pvals.iter().copied()).collect());
        }
    }
    let bad = form_residual_on_surface(&residual, &field, &coords, &params, &points, policy.tol)?;
    ensure!(bad == 0, "relativistic residual above tolerance in {bad} coefficient evaluations");
    Ok(format!("PU symbolic; relativistic {} on-surface samples below {:e}", points.len(), policy.tol))
}

pub struct PuRun {
    pub drift: f64,
    pub holonomy: Vec<f64>,
}

pub fn pu_run(h: f64) -> Result<PuRun, String> {
    let sys = super::load_system("pais_uhlenbeck.lag");
    let c = sys.chart().clone();
    let u = UnifiedSystem::new(&sys);
    let x = u.solve_regular(&sys.hessian(&SamplingPolicy::default())).map_err(|e| e.to_string())?;
    let xl = u.recover_lagrangian_field(&x);
    let mut x0: NumericPoint = [(c.q(0, 0), 1.0)].into_iter().collect();
    x0.extend_params(&BTreeMap::from([("w".to_string(), 1.0), ("g".to_string(), 1.0)]));
    let traj = integrate(&xl, Space::Lagrangian, &c, &x0, IntegratorSettings { h, t_end: 10.0 }).map_err(|e| e.to_string())?;
    ensure!(traj.diagnostic.is_none(), "{:?}", traj.diagnostic);
    let drift = conserved(&traj, sys.energy()).map_err(|e| e.to_string())?.drift;
    let holonomy = holonomy_defects(&traj, &c).map_err(|e| e.to_string())?;
    Ok(PuRun { drift, holonomy })
}

pub fn pu_numeric_suite() -> Check {
    let start = Instant::now();
    let a = pu_run(1e-3)?;
    let b = pu_run(5e-4)?;
    let elapsed = start.elapsed();
    let ratio = a.drift / b.drift;
    let holonomy_ratios: Vec<f64> = a.holonomy.iter().zip(&b.holonomy).map(|(x, y)| x / y).collect();
    let summary = format!(
        "drift {:.2e} (h) / {:.2e} (h/2), ratio {ratio:.2}; holonomy ratios {holonomy_ratios:.2?}; {elapsed:.2?}",
        a.drift, b.drift
    );
    ensure!(a.drift < 1e-8, "E_L drift {:.2e} >= 1e-8; {summary}", a.drift);
    ensure!(holonomy_ratios.iter().all(|r| (3.0..5.0).contains(r)), "holonomy not O(h^2); {summary}");
    ensure!(elapsed < Duration::from_secs(10), "runtime; {summary}");
    ensure!((12.0..=20.0).contains(&ratio), "drift ratio outside [12, 20]; {summary}");
    Ok(summary)
}

/// Fourth-order central difference of `f` along `vars[s]` at `x`.
fn finite_difference(f: &Expr, vars: &[Symbol], x: &[f64], s: usize) -> Option<f64> {
    let h = 1e-3 * x[s].abs().max(1.0);
    let at = |dx: f64| {
        let mut y = x.to_vec();
        y[s] += dx;
        f.eval_with(&|sym| vars.iter().position(|v| v == sym).map(|i| y[i])).ok()
    };
    let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
    Some((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// Relative error is taken against `max(|exact|, 1)`.
pub fn gradient_oracle(count: usize, seed: u64) -> Check {
    let chart = ChartSpec::new(2, 2);
    let vars = chart.q_block(0..3);
    let mut rng = super::rng(seed);
    let mut done = 0;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    while done < count {
        let f = super::random_expression(&mut rng, &vars, 3);
        let s = rng.gen_range(0..vars.len());
        let x: Vec<f64> = (0..vars.len()).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let exact = f.diff(&vars[s]).eval_with(&|sym| vars.iter().position(|v| v == sym).map(|i| x[i]));
        let (Ok(exact), Some(fd)) = (exact, finite_difference(&f, &vars, &x, s)) else { continue };
        let err = (fd - exact).abs() / exact.abs().max(1.0);
        worst = worst.max(err);
        if err >= 1e-6 {
            failures.push(format!("d/d{} of {f} at {x:?}: symbolic {exact}, fd {fd}", vars[s]));
        }
        done += 1;
    }
    ensure!(failures.is_empty(), "{} of {count} failed:\n{}", failures.len(), failures.join("\n"));
    Ok(format!("{count} checks, worst relative error {worst:.1e}"))
}

pub fn hessian_classification() -> Check {
    let policy = SamplingPolicy::default();
    let pu = super::load_system("pais_uhlenbeck.lag");
    let h = pu.hessian(&policy);
    ensure!(h.verdict == HessianVerdict::Regular, "PU verdict {:?}", h.verdict);
    let det = h.determinant.clone().ok_or("PU determinant missing")?;
    ensure!(det == ex("-g", pu.chart()), "PU determinant {det}");
    let rel = super::load_system("relativistic_particle.lag");
    let h = rel.hessian(&policy);
    ensure!(h.verdict == HessianVerdict::Singular, "relativistic verdict {:?}", h.verdict);
    let det = h.determinant.clone().ok_or("relativistic determinant missing")?;
    ensure!(det.is_zero(), "relativistic determinant {det}");
    let mut rng = super::rng(0x4E55);
    for case in 0..20 {
        let (c, l, m) = super::random_regular_quadratic(&mut rng);
        ensure!(super::int_det(&m) != 0, "case {case}: generator produced a singular matrix");
        let sys = LagrangianSystem::new(c, l.clone()).map_err(|e| e.to_string())?;
        let h = sys.hessian(&policy);
        ensure!(h.verdict == HessianVerdict::Regular, "case {case}: {l} classified {:?}", h.verdict);
    }
    Ok("PU det = -g regular; relativistic det = 0 singular; 20 random quadratics regular".into())
}
