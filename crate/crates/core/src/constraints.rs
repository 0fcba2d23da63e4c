//! Presymplectic constraint algorithm on the unified space.
//!
//! Constraints come in two kinds. Projectable ones depend only on
//! `q_0 … q_{k-1}`, the momenta and parameters, and are tested on the phase
//! space. All others are restricted to the graph of the Legendre map
//! (`p ↦ p̂`) and tested on `T^{2k-1}Q`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::forms::VectorFieldExpr;
use crate::jetcalc::provably_nonzero;
use crate::symbolic::linalg::{numeric_rank, solve_affine};
use crate::symbolic::zero::below_tol;
use crate::symbolic::{is_zero, ChartSpec, Compiled, CompiledVec, Expr, SamplingPolicy, Symbol, ZeroVerdict};
use crate::unified::{semispray1_conditions, UnifiedSystem};

/// `L(X)φ = X(φ)`.
pub fn lie_apply(x: &VectorFieldExpr, phi: &Expr) -> Expr {
    x.apply(phi)
}

/// Whether `e` lives on the phase space `T*(T^{k-1}Q)`.
pub fn is_projectable(chart: &ChartSpec, e: &Expr) -> bool {
    e.free_symbols().iter().all(|s| match s {
        Symbol::Q { order, .. } => (*order as usize) < chart.k,
        Symbol::P { .. } | Symbol::Param(_) => true,
        Symbol::Unknown { .. } => false,
    })
}

/// Splits `e` into the part whose momentum coefficients are projectable and
/// the remainder.
pub fn split_projectable(chart: &ChartSpec, e: &Expr) -> (Expr, Expr) {
    let groups = e.split_numerator(|m| {
        m.symbol_powers().filter(|(s, _)| s.is_p()).map(|(s, k)| (s.clone(), k)).collect::<Vec<_>>()
    });
    let mut proj = Vec::new();
    let mut rest = Vec::new();
    for (_, part) in groups {
        if is_projectable(chart, &part) {
            proj.push(part);
        } else {
            rest.push(part);
        }
    }
    (Expr::sum_all(&proj), Expr::sum_all(&rest))
}

/// Real components of a constraint: a positive sum of even powers of single
/// symbols vanishes exactly when each symbol does.
pub fn real_components(e: &Expr) -> Vec<Expr> {
    let num = e.numer();
    let sos = num.len() > 1
        && num.terms().iter().all(|(m, c)| {
            use num_traits::Signed;
            c.is_positive() && m.factors().len() == 1 && m.factors()[0].1 % 2 == 0 && m.factors()[0].0.as_symbol().is_some()
        });
    if !sos {
        return vec![e.clone()];
    }
    num.terms().iter().map(|(m, _)| Expr::symbol(m.factors()[0].0.as_symbol().unwrap().clone())).collect()
}

/// A constraint set sampled by damped Gauss-Newton from seeded random starts.
pub struct Surface {
    vars: Vec<Symbol>,
    params: Vec<Symbol>,
    residual: CompiledVec,
    jacobian: Vec<Vec<Option<Compiled>>>,
    count: usize,
}

const NEWTON_ITERS: usize = 200;
const NEWTON_TOL: f64 = 1e-13;

impl Surface {
    pub fn new(vars: Vec<Symbol>, params: Vec<Symbol>, constraints: &[Expr]) -> Result<Surface> {
        let mut inputs = vars.clone();
        inputs.extend(params.iter().cloned());
        let eval_err = |e: crate::error::EvalError| Error::Sampling(format!("constraint not evaluable: {e}"));
        let residual = CompiledVec::new(constraints, &inputs).map_err(eval_err)?;
        let mut jacobian = Vec::with_capacity(constraints.len());
        for c in constraints {
            let mut row = Vec::with_capacity(vars.len());
            for v in &vars {
                let d = c.diff(v);
                row.push(if d.is_zero() { None } else { Some(Compiled::new(&d, &inputs).map_err(eval_err)?) });
            }
            jacobian.push(row);
        }
        Ok(Surface { vars, params, residual, jacobian, count: constraints.len() })
    }

    pub fn vars(&self) -> &[Symbol] {
        &self.vars
    }

    pub fn params(&self) -> &[Symbol] {
        &self.params
    }

    fn residual_at(&self, input: &[f64]) -> Option<DVector<f64>> {
        let r = self.residual.eval(input).ok()?;
        r.iter().all(|v| v.is_finite()).then(|| DVector::from_vec(r))
    }

    fn jacobian_at(&self, input: &[f64]) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.count, self.vars.len());
        for (i, row) in self.jacobian.iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                if let Some(c) = c {
                    let v = c.eval(input).ok()?;
                    if !v.is_finite() {
                        return None;
                    }
                    j[(i, k)] = v;
                }
            }
        }
        Some(j)
    }

    /// Moves `start` onto the surface with parameters held fixed.
    pub fn project(&self, start: &[f64], params: &[f64]) -> Option<Vec<f64>> {
        let m = self.vars.len();
        let mut input: Vec<f64> = start.iter().chain(params).copied().collect();
        if self.count == 0 {
            return Some(input[..m].to_vec());
        }
        let mut r = self.residual_at(&input)?;
        for _ in 0..NEWTON_ITERS {
            if r.amax() <= NEWTON_TOL {
                return Some(input[..m].to_vec());
            }
            let j = self.jacobian_at(&input)?;
            let step = j.svd(true, true).solve(&r, 1e-12).ok()?;
            let norm = r.norm();
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let mut trial = input.clone();
                for k in 0..m {
                    trial[k] -= alpha * step[k];
                }
                if let Some(rt) = self.residual_at(&trial) {
                    if rt.norm() < norm {
                        input = trial;
                        r = rt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (r.amax() <= NEWTON_TOL).then(|| input[..m].to_vec())
    }

    /// `count` on-surface points as `vars ++ params` input vectors.
    pub fn sample(&self, policy: &SamplingPolicy, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0;
        while out.len() < count {
            if attempts >= count + policy.max_retries {
                return Err(Error::Sampling(format!(
                    "found {} of {count} points on the constraint surface after {attempts} starts",
                    out.len()
                )));
            }
            attempts += 1;
            let start = policy.random_values(self.vars.len(), rng);
            let params = policy.random_values(self.params.len(), rng);
            if let Some(x) = self.project(&start, &params) {
                if x.iter().all(|v| v.abs() < 1e6) {
                    out.push(x.into_iter().chain(params).collect());
                }
            }
        }
        Ok(out)
    }
}

/// Whether `e` is below tolerance at every sample (inputs ordered as `inputs`).
fn vanishes_at(e: &Expr, inputs: &[Symbol], points: &[Vec<f64>], tol: f64) -> Result<bool> {
    if e.is_zero() {
        return Ok(true);
    }
    let c = Compiled::new(e, inputs).map_err(|err| Error::Sampling(format!("cannot evaluate {e}: {err}")))?;
    let mut good = 0;
    for x in points {
        match c.eval_scaled(x) {
            Ok((v, scale)) if v.is_finite() => {
                if !below_tol(v, scale, tol) {
                    return Ok(false);
                }
                good += 1;
            }
            _ => {}
        }
    }
    if good == 0 {
        return Err(Error::Sampling(format!("no sample point evaluates {e}")));
    }
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    GraphPrimary,
    ImagePrimary,
    Secondary(usize),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::GraphPrimary => write!(f, "graph-primary"),
            Provenance::ImagePrimary => write!(f, "image-primary"),
            Provenance::Secondary(g) => write!(f, "secondary-gen-{g}"),
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintEntry {
    pub label: String,
    pub expr: Expr,
    pub provenance: Provenance,
    /// Constraint whose tangency condition produced this one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<String>,
    /// That tangency condition after reduction, before normalization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tangency: Option<Expr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LedgerStatus {
    Stabilized,
    Inconsistent,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintLedger {
    pub generations: Vec<Vec<ConstraintEntry>>,
    pub status: LedgerStatus,
    pub fixed_unknowns: BTreeMap<Symbol, Expr>,
    /// Unknowns still undetermined, constrained only by `tangency_equations`.
    pub free_unknowns: Vec<Symbol>,
    pub tangency_equations: Vec<Expr>,
    /// Numeric compatibility of `tangency_equations` on the final surface.
    pub compatible: Option<bool>,
    /// `H` restricted to the final surface.
    pub restricted_hamiltonian: Expr,
    pub restricted_hamiltonian_vanishes: bool,
    pub field: VectorFieldExpr,
    pub notes: Vec<String>,
    /// The final constraint set as functions on `T^{2k-1}Q`.
    #[serde(skip)]
    pub surface: Vec<Expr>,
}

impl ConstraintLedger {
    pub fn entries(&self) -> impl Iterator<Item = &ConstraintEntry> {
        self.generations.iter().flatten()
    }

    /// Constraints other than the graph of the Legendre map, with their generation.
    pub fn non_graph(&self) -> Vec<(usize, &ConstraintEntry)> {
        self.generations
            .iter()
            .enumerate()
            .flat_map(|(g, gen)| gen.iter().map(move |e| (g, e)))
            .filter(|(_, e)| e.provenance != Provenance::GraphPrimary)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintPolicy {
    pub max_generations: usize,
    pub semispray1: bool,
    pub sampling: SamplingPolicy,
    pub independence_samples: usize,
}

impl Default for ConstraintPolicy {
    fn default() -> Self {
        ConstraintPolicy { max_generations: 10, semispray1: false, sampling: SamplingPolicy::default(), independence_samples: 8 }
    }
}

/// Outcome of reducing a tangency condition against the current ledger.
#[derive(Clone, Debug, PartialEq)]
pub enum Reduction {
    Vanishes,
    NewConstraint { expr: Expr, raw: Expr, projectable: bool },
    FixesUnknowns(BTreeMap<Symbol, Expr>),
    /// Linear in the unknowns but with no pivot known to be nonzero.
    Equation(Expr),
    Inconsistent(Expr),
}

/// Mutable state of one run of the algorithm.
pub struct ConstraintAlgorithm<'a> {
    unified: &'a UnifiedSystem,
    policy: ConstraintPolicy,
    graph_sub: BTreeMap<Symbol, Expr>,
    fixed: BTreeMap<Symbol, Expr>,
    unknowns: Vec<Symbol>,
    base_field: VectorFieldExpr,
    /// Projectable constraints (real components), tested on the phase space.
    phase: Vec<Expr>,
    /// Constraints restricted to the graph, as functions on `T^{2k-1}Q`.
    lagrangian: Vec<Expr>,
    phase_points: Option<Vec<Vec<f64>>>,
    lagrangian_points: Option<Vec<Vec<f64>>>,
    rng: ChaCha8Rng,
}

impl<'a> ConstraintAlgorithm<'a> {
    pub fn new(unified: &'a UnifiedSystem, policy: ConstraintPolicy) -> ConstraintAlgorithm<'a> {
        let chart = unified.chart();
        let coeffs = unified.solve_coefficients();
        let mut fixed = BTreeMap::new();
        let mut base_field = unified.ansatz().substitute(&coeffs.identifications);
        if policy.semispray1 {
            let cond = semispray1_conditions(chart);
            base_field = base_field.substitute(&cond);
            fixed.extend(cond);
        }
        let unknowns = coeffs.residual_unknowns.into_iter().filter(|u| !fixed.contains_key(u)).collect();
        let rng = policy.sampling.rng();
        ConstraintAlgorithm {
            unified,
            graph_sub: unified.system().graph_substitution(),
            policy,
            fixed,
            unknowns,
            base_field,
            phase: Vec::new(),
            lagrangian: Vec::new(),
            phase_points: None,
            lagrangian_points: None,
            rng,
        }
    }

    fn chart(&self) -> &ChartSpec {
        self.unified.chart()
    }

    /// The field with every fixed unknown substituted.
    pub fn field(&self) -> VectorFieldExpr {
        self.base_field.substitute(&self.fixed)
    }

    fn phase_inputs(&self) -> (Vec<Symbol>, Vec<Symbol>) {
        let c = self.chart();
        (c.phase_coords(), c.param_symbols())
    }

    fn lagrangian_inputs(&self) -> (Vec<Symbol>, Vec<Symbol>) {
        let c = self.chart();
        (c.lagrangian_coords(), c.param_symbols())
    }

    fn all_inputs((vars, params): (Vec<Symbol>, Vec<Symbol>)) -> Vec<Symbol> {
        vars.into_iter().chain(params).collect()
    }

    fn phase_points(&mut self) -> Result<Vec<Vec<f64>>> {
        if self.phase_points.is_none() {
            let (vars, params) = self.phase_inputs();
            let s = Surface::new(vars, params, &self.phase)?;
            self.phase_points = Some(s.sample(&self.policy.sampling, self.policy.sampling.samples, &mut self.rng)?);
        }
        Ok(self.phase_points.clone().unwrap())
    }

    fn lagrangian_points(&mut self) -> Result<Vec<Vec<f64>>> {
        if self.lagrangian_points.is_none() {
            let (vars, params) = self.lagrangian_inputs();
            let s = Surface::new(vars, params, &self.lagrangian)?;
            self.lagrangian_points = Some(s.sample(&self.policy.sampling, self.policy.sampling.samples, &mut self.rng)?);
        }
        Ok(self.lagrangian_points.clone().unwrap())
    }

    /// Whether `e` vanishes on the current phase-space surface.
    pub fn vanishes_on_phase(&mut self, e: &Expr) -> Result<bool> {
        if e.is_zero() {
            return Ok(true);
        }
        let pts = self.phase_points()?;
        vanishes_at(e, &Self::all_inputs(self.phase_inputs()), &pts, self.policy.sampling.tol)
    }

    /// Whether `e` vanishes on the current surface inside the graph.
    pub fn vanishes_on_graph(&mut self, e: &Expr) -> Result<bool> {
        let r = e.substitute(&self.graph_sub);
        if r.is_zero() {
            return Ok(true);
        }
        let pts = self.lagrangian_points()?;
        vanishes_at(&r, &Self::all_inputs(self.lagrangian_inputs()), &pts, self.policy.sampling.tol)
    }

    /// Adds a constraint to the sampled surfaces.
    pub fn add_constraint(&mut self, e: &Expr) {
        let chart = self.chart().clone();
        let parts = real_components(e);
        if is_projectable(&chart, e) {
            self.phase.extend(parts.iter().cloned());
            self.phase_points = None;
        }
        for p in parts {
            let r = p.substitute(&self.graph_sub);
            if !r.is_zero() {
                self.lagrangian.push(r);
                self.lagrangian_points = None;
            }
        }
    }

    fn has_unknowns(e: &Expr) -> bool {
        e.free_symbols().iter().any(|s| s.is_unknown())
    }

    /// Solves for an unknown whose coefficient is nonzero everywhere.
    fn try_fix(&self, eq: &Expr) -> Option<BTreeMap<Symbol, Expr>> {
        let live: Vec<Symbol> = self.unknowns.iter().filter(|u| eq.depends_on(u)).cloned().collect();
        let (coeffs, rest) = eq.affine_in(&live)?;
        let (i, a) = coeffs
            .iter()
            .enumerate()
            .filter(|(_, a)| provably_nonzero(self.chart(), a))
            .min_by_key(|(_, a)| a.size())?;
        let mut others = vec![rest];
        for (j, b) in coeffs.iter().enumerate() {
            if j != i {
                others.push(b * &Expr::symbol(live[j].clone()));
            }
        }
        let value = -(Expr::sum_all(&others) / a);
        Some(BTreeMap::from([(live[i].clone(), value)]))
    }

    /// Classifies a tangency condition `ψ` derived from a constraint of the
    /// given kind.
    pub fn reduce(&mut self, psi: &Expr, from_projectable: bool) -> Result<Reduction> {
        let psi = psi.substitute(&self.fixed);
        if psi.is_zero() {
            return Ok(Reduction::Vanishes);
        }
        let chart = self.chart().clone();
        if from_projectable && !Self::has_unknowns(&psi) {
            let (proj, rest) = split_projectable(&chart, &psi);
            if self.vanishes_on_graph(&rest)? {
                if proj.is_zero() {
                    return Ok(Reduction::Vanishes);
                }
                if proj.is_constant() {
                    return Ok(Reduction::Inconsistent(proj));
                }
                if self.vanishes_on_phase(&proj)? {
                    return Ok(Reduction::Vanishes);
                }
                return Ok(Reduction::NewConstraint { expr: proj.primitive(), raw: proj, projectable: true });
            }
        }
        let restricted = psi.substitute(&self.graph_sub);
        if Self::has_unknowns(&restricted) {
            return Ok(match self.try_fix(&restricted) {
                Some(m) => Reduction::FixesUnknowns(m),
                None => Reduction::Equation(restricted),
            });
        }
        if restricted.is_zero() {
            return Ok(Reduction::Vanishes);
        }
        if restricted.is_constant() {
            return Ok(Reduction::Inconsistent(restricted));
        }
        if self.vanishes_on_graph(&restricted)? {
            return Ok(Reduction::Vanishes);
        }
        Ok(Reduction::NewConstraint { expr: restricted.primitive(), raw: restricted, projectable: false })
    }

    fn fix(&mut self, m: BTreeMap<Symbol, Expr>, pool: &mut Vec<Expr>) {
        for (u, v) in &m {
            for x in self.fixed.values_mut() {
                *x = x.substitute_one(u, v);
            }
            self.unknowns.retain(|w| w != u);
        }
        self.fixed.extend(m.clone());
        for eq in pool.iter_mut() {
            *eq = eq.substitute(&m);
        }
    }

    /// Gradient rank test: does `candidate` add a new direction to `existing`?
    fn independent(&mut self, existing: &[Expr], candidate: &Expr, projectable: bool) -> Result<bool> {
        let (vars, params) = if projectable { self.phase_inputs() } else { self.lagrangian_inputs() };
        let inputs: Vec<Symbol> = vars.iter().chain(&params).cloned().collect();
        let pts = if projectable { self.phase_points()? } else { self.lagrangian_points()? };
        let grads = |fs: &[Expr]| -> Result<Vec<Vec<Option<Compiled>>>> {
            fs.iter()
                .map(|f| {
                    vars.iter()
                        .map(|v| {
                            let d = f.diff(v);
                            if d.is_zero() {
                                Ok(None)
                            } else {
                                Compiled::new(&d, &inputs).map(Some).map_err(|e| Error::Sampling(e.to_string()))
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let mut all = existing.to_vec();
        all.extend(real_components(candidate));
        let g = grads(&all)?;
        let rank_of = |rows: usize, x: &[f64]| -> Option<usize> {
            let mut m = DMatrix::zeros(rows, vars.len());
            for i in 0..rows {
                for (j, c) in g[i].iter().enumerate() {
                    if let Some(c) = c {
                        m[(i, j)] = c.eval(x).ok()?;
                    }
                }
            }
            Some(numeric_rank(&m, 1e-8))
        };
        let mut votes = 0;
        let mut total = 0;
        for x in pts.iter().take(self.policy.independence_samples) {
            if let (Some(a), Some(b)) = (rank_of(existing.len(), x), rank_of(all.len(), x)) {
                total += 1;
                if b > a {
                    votes += 1;
                }
            }
        }
        Ok(total == 0 || 2 * votes > total)
    }

    /// Numeric compatibility of `A F = b` at points of the final surface.
    fn compatible(&mut self, eqs: &[Expr]) -> Result<bool> {
        let (vars, params) = self.lagrangian_inputs();
        let inputs: Vec<Symbol> = vars.into_iter().chain(params).collect();
        let unknowns: Vec<Symbol> =
            self.unknowns.iter().filter(|u| eqs.iter().any(|e| e.depends_on(u))).cloned().collect();
        let mut rows = Vec::new();
        for e in eqs {
            let (a, b) = e
                .affine_in(&unknowns)
                .ok_or_else(|| Error::Invalid("tangency condition is not linear in the unknowns".into()))?;
            let mut row = a;
            row.push(b);
            rows.push(row);
        }
        let compiled: Vec<Vec<Compiled>> = rows
            .iter()
            .map(|r| r.iter().map(|e| Compiled::new(e, &inputs)).collect::<std::result::Result<_, _>>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Sampling(e.to_string()))?;
        let pts = self.lagrangian_points()?;
        let m = unknowns.len();
        let mut checked = 0;
        for x in &pts {
            let mut aug = DMatrix::zeros(rows.len(), m + 1);
            let mut ok = true;
            for (i, r) in compiled.iter().enumerate() {
                for (j, c) in r.iter().enumerate() {
                    match c.eval(x) {
                        Ok(v) if v.is_finite() => aug[(i, j)] = v,
                        _ => ok = false,
                    }
                }
            }
            if !ok {
                continue;
            }
            checked += 1;
            let a = aug.columns(0, m).into_owned();
            if numeric_rank(&a, 1e-8) != numeric_rank(&aug, 1e-8) {
                return Ok(false);
            }
        }
        if checked == 0 {
            return Err(Error::Sampling("no point evaluates the tangency system".into()));
        }
        Ok(true)
    }

    pub fn run(mut self, image_primary: &[Expr]) -> Result<ConstraintLedger> {
        let chart = self.chart().clone();
        let mut notes = Vec::new();
        let mut gen0 = Vec::new();
        for (r, row) in self.unified.graph_constraints().iter().enumerate() {
            for (a, xi) in row.iter().enumerate() {
                let label = if chart.n == 1 { format!("xi{r}") } else { format!("xi{r}_{}", a + 1) };
                gen0.push(ConstraintEntry { label, expr: xi.clone(), provenance: Provenance::GraphPrimary, derived_from: None, tangency: None });
            }
        }
        for (j, phi) in image_primary.iter().enumerate() {
            if !is_projectable(&chart, phi) {
                return Err(Error::Invalid(format!("primary constraint {phi} must depend only on q_i (i < k), momenta and parameters")));
            }
            let on_graph = phi.substitute(&self.graph_sub);
            if !is_zero(&on_graph, &self.policy.sampling).vanishes() {
                return Err(Error::Invalid(format!("primary constraint {phi} does not vanish on the image of the Legendre map")));
            }
            gen0.push(ConstraintEntry {
                label: format!("phi(0)_{}", j + 1),
                expr: phi.clone(),
                provenance: Provenance::ImagePrimary,
                derived_from: None,
                tangency: None,
            });
            self.add_constraint(phi);
        }
        let mut generations = vec![gen0];
        let mut pool: Vec<Expr> = Vec::new();
        let mut status = LedgerStatus::Stabilized;
        let mut generation = 0;
        loop {
            let x = self.field();
            let mut fresh: Vec<(Expr, bool, Option<(String, Expr)>)> = Vec::new();
            let frontier: Vec<ConstraintEntry> = generations[generation].clone();
            for entry in &frontier {
                let projectable = entry.provenance != Provenance::GraphPrimary && is_projectable(&chart, &entry.expr);
                let psi = lie_apply(&x, &entry.expr);
                match self.reduce(&psi, projectable)? {
                    Reduction::Vanishes => {}
                    Reduction::FixesUnknowns(m) => self.fix(m, &mut pool),
                    Reduction::Equation(eq) => pool.push(eq),
                    Reduction::Inconsistent(c) => {
                        notes.push(format!("tangency of {} yields the nonzero constant {c}", entry.label));
                        status = LedgerStatus::Inconsistent;
                    }
                    Reduction::NewConstraint { expr, raw, projectable } => {
                        if fresh.iter().any(|(e, _, _)| expr.rational_multiple_of(e).is_some()) {
                            continue;
                        }
                        let existing: Vec<Expr> = if projectable { self.phase.clone() } else { self.lagrangian.clone() };
                        let mut existing = existing;
                        for (e, p, _) in &fresh {
                            if *p == projectable {
                                if projectable {
                                    existing.extend(real_components(e));
                                } else {
                                    existing.extend(real_components(e).iter().map(|c| c.substitute(&self.graph_sub)));
                                }
                            }
                        }
                        let candidate = if projectable { expr.clone() } else { expr.substitute(&self.graph_sub) };
                        if self.independent(&existing, &candidate, projectable)? {
                            fresh.push((expr, projectable, Some((entry.label.clone(), raw))));
                        } else {
                            notes.push(format!("tangency of {} gives {expr}, dependent on the current constraints", entry.label));
                        }
                    }
                }
            }
            if status == LedgerStatus::Inconsistent {
                break;
            }
            // equations with a generic pivot are solved once the Hessian allows it
            if !pool.is_empty() && self.unified.system().hessian(&self.policy.sampling).is_regular() {
                let live: Vec<Symbol> = self.unknowns.clone();
                if let Some(sol) = solve_affine(&pool, &live) {
                    if sol.free.is_empty() {
                        let solved = sol.solved.clone();
                        self.fix(solved, &mut pool);
                        for r in sol.residuals {
                            let r = r.substitute(&self.fixed);
                            if !r.is_zero() && !self.vanishes_on_graph(&r)? {
                                fresh.push((r.primitive(), false, None));
                            }
                        }
                        pool.clear();
                    }
                }
            }
            if fresh.is_empty() {
                break;
            }
            if generation + 1 > self.policy.max_generations {
                status = LedgerStatus::BudgetExhausted;
                break;
            }
            generation += 1;
            let single = fresh.len() == 1;
            let mut entries = Vec::new();
            for (j, (e, _, origin)) in fresh.into_iter().enumerate() {
                let label = if single { format!("phi({generation})") } else { format!("phi({generation})_{}", j + 1) };
                self.add_constraint(&e);
                let (derived_from, tangency) = origin.unzip();
                entries.push(ConstraintEntry { label, expr: e, provenance: Provenance::Secondary(generation), derived_from, tangency });
            }
            generations.push(entries);
        }
        let mut compatible = None;
        pool.retain(|e| !e.substitute(&self.fixed).is_zero());
        let pool: Vec<Expr> = pool.iter().map(|e| e.substitute(&self.fixed)).collect();
        if status == LedgerStatus::Stabilized && !pool.is_empty() {
            let ok = self.compatible(&pool)?;
            compatible = Some(ok);
            if !ok {
                notes.push("tangency equations for the free coefficients are incompatible on the final surface".into());
            }
        }
        let restricted_hamiltonian = self.unified.hamiltonian().substitute(&self.graph_sub);
        let restricted_hamiltonian_vanishes = match is_zero(&restricted_hamiltonian, &self.policy.sampling) {
            ZeroVerdict::ProvenZero => true,
            _ => status == LedgerStatus::Stabilized && self.vanishes_on_graph(&restricted_hamiltonian)?,
        };
        Ok(ConstraintLedger {
            generations,
            status,
            fixed_unknowns: self.fixed.clone(),
            free_unknowns: self.unknowns.clone(),
            tangency_equations: pool,
            compatible,
            restricted_hamiltonian,
            restricted_hamiltonian_vanishes,
            field: self.field(),
            notes,
            surface: self.lagrangian.clone(),
        })
    }
}

/// Runs the constraint algorithm for `unified` with declared image constraints.
pub fn run_algorithm(unified: &UnifiedSystem, image_primary: &[Expr], policy: &ConstraintPolicy) -> Result<ConstraintLedger> {
    ConstraintAlgorithm::new(unified, policy.clone()).run(image_primary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jetcalc::LagrangianSystem;
    use crate::symbolic::{parse_expr, parse_system};

    fn unified(src: &str) -> (UnifiedSystem, Vec<Expr>) {
        let s = parse_system(src).unwrap();
        (UnifiedSystem::new(&LagrangianSystem::new(s.chart, s.lagrangian).unwrap()), s.primary)
    }

    const PU: &str = "system(dim=1, order=2) params(w, g) nonzero(g) L = 1/2*(q1^2 - w^2*q0^2 - g*q2^2)";

    #[test]
    fn sum_of_squares_splits() {
        let c = ChartSpec::new(3, 2);
        let e = parse_expr("p0_1^2 + p0_2^2 + 3*p0_3^2", &c).unwrap();
        assert_eq!(real_components(&e).len(), 3);
        let mixed = parse_expr("p0_1^2 - p0_2^2", &c).unwrap();
        assert_eq!(real_components(&mixed), vec![mixed]);
        let single = parse_expr("p0_1^2", &c).unwrap();
        assert_eq!(real_components(&single), vec![single]);
    }

    #[test]
    fn projectable_split() {
        let c = ChartSpec::new(1, 2);
        let e = parse_expr("q1*p0 + q3*p1 + q0", &c).unwrap();
        let (proj, rest) = split_projectable(&c, &e);
        assert_eq!(proj, parse_expr("q1*p0 + q0", &c).unwrap());
        assert_eq!(rest, parse_expr("q3*p1", &c).unwrap());
        assert!(is_projectable(&c, &proj));
        assert!(!is_projectable(&c, &rest));
    }

    #[test]
    fn lie_derivative_of_constant_vanishes() {
        let (u, _) = unified(PU);
        assert!(lie_apply(&u.ansatz(), &Expr::from_int(7)).is_zero());
    }

    #[test]
    fn pais_uhlenbeck_fixes_both_coefficients() {
        let (u, primary) = unified(PU);
        let c = u.chart().clone();
        let ledger = run_algorithm(&u, &primary, &ConstraintPolicy::default()).unwrap();
        assert_eq!(ledger.status, LedgerStatus::Stabilized);
        assert_eq!(ledger.generations.len(), 1);
        assert!(ledger.non_graph().is_empty());
        assert_eq!(ledger.fixed_unknowns[&c.unknown(crate::symbolic::UnknownKind::HighF, 2, 0)], c.qe(3, 0));
        assert_eq!(
            ledger.fixed_unknowns[&c.unknown(crate::symbolic::UnknownKind::HighF, 3, 0)],
            parse_expr("-(w^2*q0 + q2)/g", &c).unwrap()
        );
        assert!(ledger.free_unknowns.is_empty());
    }

    #[test]
    fn reduce_fixes_and_vanishes() {
        let (u, _) = unified(PU);
        let c = u.chart().clone();
        let mut alg = ConstraintAlgorithm::new(&u, ConstraintPolicy::default());
        let f2 = c.unknown(crate::symbolic::UnknownKind::HighF, 2, 0);
        let psi = parse_expr("g*(F2 - q3)", &c).unwrap();
        match alg.reduce(&psi, false).unwrap() {
            Reduction::FixesUnknowns(m) => assert_eq!(m[&f2], c.qe(3, 0)),
            other => panic!("{other:?}"),
        }
        assert_eq!(alg.reduce(&Expr::zero(), false).unwrap(), Reduction::Vanishes);
    }

    #[test]
    fn constant_tangency_is_inconsistent() {
        let (u, _) = unified(PU);
        let mut alg = ConstraintAlgorithm::new(&u, ConstraintPolicy::default());
        assert!(matches!(alg.reduce(&Expr::from_int(2), true).unwrap(), Reduction::Inconsistent(_)));
    }

    #[test]
    fn primary_off_the_image_is_rejected() {
        let (u, _) = unified(PU);
        let c = u.chart().clone();
        let bogus = parse_expr("p1 - q1", &c).unwrap();
        assert!(matches!(run_algorithm(&u, &[bogus], &ConstraintPolicy::default()), Err(Error::Invalid(_))));
    }

    #[test]
    fn surface_projection_lands_on_circle() {
        let c = ChartSpec::new(2, 1);
        let circle = parse_expr("q0_1^2 + q0_2^2 - 1", &c).unwrap();
        let s = Surface::new(vec![c.q(0, 0), c.q(0, 1)], vec![], &[circle]).unwrap();
        let x = s.project(&[0.3, 2.0], &[]).unwrap();
        assert!((x[0] * x[0] + x[1] * x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn provenance_labels() {
        assert_eq!(Provenance::GraphPrimary.to_string(), "graph-primary");
        assert_eq!(Provenance::ImagePrimary.to_string(), "image-primary");
        assert_eq!(Provenance::Secondary(2).to_string(), "secondary-gen-2");
    }
}
