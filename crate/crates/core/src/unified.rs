//! The unified (Skinner-Rusk) description on `W = T^{2k-1}Q ×_{T^{k-1}Q} T*(T^{k-1}Q)`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::{CoordinateMap, DifferentialForm, VectorFieldExpr};
use crate::jetcalc::{semispray_type, HessianReport, LagrangianSystem};
use crate::symbolic::linalg::solve_affine;
use crate::symbolic::{ChartSpec, Expr, Symbol, UnknownKind};

/// `θ_{k-1} = Σ p^i_A dq_i^A` on `T*(T^{k-1}Q)`.
pub fn canonical_theta(chart: &ChartSpec) -> DifferentialForm {
    let mut w = DifferentialForm::zero(1);
    for i in 0..chart.k {
        for a in 0..chart.n {
            w = w.add(&DifferentialForm::term(vec![chart.q(i, a)], chart.pe(i, a)));
        }
    }
    w
}

/// `ω_{k-1} = Σ dq_i^A ∧ dp^i_A`; pulled back to `W` this is `Ω`.
pub fn canonical_omega(chart: &ChartSpec) -> DifferentialForm {
    let mut w = DifferentialForm::zero(2);
    for i in 0..chart.k {
        for a in 0..chart.n {
            w = w.add(&DifferentialForm::term(vec![chart.q(i, a), chart.p(i, a)], Expr::one()));
        }
    }
    w
}

/// Unknown coefficient symbols of the general vector field on `W`.
pub fn ansatz_unknowns(chart: &ChartSpec) -> Vec<Symbol> {
    let (n, k) = (chart.n, chart.k);
    let mut out = Vec::with_capacity(3 * k * n);
    for i in 0..2 * k {
        let kind = if i < k { UnknownKind::LowF } else { UnknownKind::HighF };
        out.extend((0..n).map(|a| chart.unknown(kind, i, a)));
    }
    for i in 0..k {
        out.extend((0..n).map(|a| chart.unknown(UnknownKind::G, i, a)));
    }
    out
}

/// `F_i^A` symbols, `k ≤ i ≤ 2k-1`.
pub fn high_unknowns(chart: &ChartSpec) -> Vec<Symbol> {
    (chart.k..2 * chart.k).flat_map(|i| (0..chart.n).map(move |a| chart.unknown(UnknownKind::HighF, i, a))).collect()
}

/// `F_i^A ↦ q_{i+1}^A` for `k ≤ i ≤ 2k-2`: the extra conditions making the
/// field a semispray of type 1.
pub fn semispray1_conditions(chart: &ChartSpec) -> BTreeMap<Symbol, Expr> {
    let mut m = BTreeMap::new();
    for i in chart.k..2 * chart.k - 1 {
        for a in 0..chart.n {
            m.insert(chart.unknown(UnknownKind::HighF, i, a), chart.qe(i + 1, a));
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct UnifiedSystem {
    system: LagrangianSystem,
    coupling: Expr,
    hamiltonian: Expr,
    omega: DifferentialForm,
    primary: Vec<Expr>,
    graph: Vec<Vec<Expr>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientSolution {
    /// Values forced on `f_i^A` and `G^i_A`.
    pub identifications: BTreeMap<Symbol, Expr>,
    /// Coefficients left free by the dynamical equation (the `F_i^A`).
    pub residual_unknowns: Vec<Symbol>,
    /// Algebraic conditions for the equation to have a solution.
    pub constraints: Vec<Expr>,
    pub semispray_type: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HamiltonianField {
    pub field: VectorFieldExpr,
    /// `h` with `FL* h = E_L`.
    pub hamiltonian: Expr,
    /// Inverse of the Legendre map on the phase space.
    pub inverse: CoordinateMap,
    /// Whether `i(X_h)ω_{k-1} - dh` normalizes to zero.
    pub verified: bool,
}

impl UnifiedSystem {
    pub fn new(system: &LagrangianSystem) -> UnifiedSystem {
        let c = system.chart();
        let (n, k) = (c.n, c.k);
        let mut pieces = Vec::with_capacity(k * n);
        for i in 0..k {
            for a in 0..n {
                pieces.push(c.pe(i, a) * c.qe(i + 1, a));
            }
        }
        let coupling = Expr::sum_all(&pieces);
        let hamiltonian = &coupling - system.lagrangian();
        let primary = (0..n).map(|a| c.pe(k - 1, a) - system.momentum(k - 1, a)).collect();
        let graph = (0..k).map(|r| (0..n).map(|a| c.pe(r, a) - system.momentum(r, a)).collect()).collect();
        UnifiedSystem { system: system.clone(), coupling, hamiltonian, omega: canonical_omega(c), primary, graph }
    }

    pub fn system(&self) -> &LagrangianSystem {
        &self.system
    }

    pub fn chart(&self) -> &ChartSpec {
        self.system.chart()
    }

    pub fn coupling(&self) -> &Expr {
        &self.coupling
    }

    pub fn hamiltonian(&self) -> &Expr {
        &self.hamiltonian
    }

    pub fn omega(&self) -> &DifferentialForm {
        &self.omega
    }

    /// `p^{k-1}_A - ∂L/∂q_k^A`.
    pub fn primary_constraints(&self) -> &[Expr] {
        &self.primary
    }

    /// `ξ_r^A = p^r_A - p̂^r_A`, indexed `[r][A]`.
    pub fn graph_constraints(&self) -> &[Vec<Expr>] {
        &self.graph
    }

    /// General vector field on `W` with symbolic coefficients.
    pub fn ansatz(&self) -> VectorFieldExpr {
        let c = self.chart();
        let mut coords = c.lagrangian_coords();
        coords.extend(c.p_block(0..c.k));
        VectorFieldExpr::from_components(coords.into_iter().zip(ansatz_unknowns(c)).map(|(s, u)| (s, Expr::symbol(u))))
    }

    /// `i(X)Ω - dH`.
    pub fn dynamical_residual(&self, x: &VectorFieldExpr) -> DifferentialForm {
        self.omega.interior(x).sub(&DifferentialForm::d_function(&self.hamiltonian))
    }

    pub fn solve_coefficients(&self) -> CoefficientSolution {
        let c = self.chart();
        let residual = self.dynamical_residual(&self.ansatz());
        let unknowns = ansatz_unknowns(c);
        let mut with_unknowns = Vec::new();
        let mut constraints = Vec::new();
        for s in c.w_coords() {
            let e = residual.coeff(&[s]);
            if e.is_zero() {
                continue;
            }
            if e.free_symbols().iter().any(|t| t.is_unknown()) {
                with_unknowns.push(e);
            } else {
                constraints.push(-e);
            }
        }
        let sol = solve_affine(&with_unknowns, &unknowns).expect("the dynamical equation is affine in its coefficients");
        debug_assert!(sol.residuals.is_empty());
        let x = self.ansatz().substitute(&sol.solved);
        CoefficientSolution {
            identifications: sol.solved,
            residual_unknowns: sol.free,
            constraints,
            semispray_type: semispray_type(&x, c),
        }
    }

    /// `L(X)ξ_r^A` restricted to the graph, ordered by `(r, A)`.
    pub fn tangency_system(&self, x: &VectorFieldExpr) -> Vec<Expr> {
        let sub = self.system.graph_substitution();
        self.graph.iter().flatten().map(|xi| x.apply(xi).substitute(&sub)).collect()
    }

    /// The unique solution of the unified equation for a regular Lagrangian.
    pub fn solve_regular(&self, hessian: &HessianReport) -> Result<VectorFieldExpr> {
        if !hessian.is_regular() {
            return Err(Error::SingularHessian);
        }
        let coeffs = self.solve_coefficients();
        let x = self.ansatz().substitute(&coeffs.identifications);
        let eqs = self.tangency_system(&x);
        let sol = solve_affine(&eqs, &coeffs.residual_unknowns)
            .ok_or_else(|| Error::Invalid("tangency conditions are not linear in the coefficients".into()))?;
        if !sol.free.is_empty() || !sol.residuals.is_empty() {
            return Err(Error::SingularHessian);
        }
        Ok(x.substitute(&sol.solved))
    }

    /// Projection of a solution on `W` to `T^{2k-1}Q`, with `p ↦ p̂`.
    pub fn recover_lagrangian_field(&self, x: &VectorFieldExpr) -> VectorFieldExpr {
        let sub = self.system.graph_substitution();
        x.restrict(|s| s.is_q()).substitute(&sub)
    }

    /// Symbolic inverse of the Legendre map, expressing `q_k … q_{2k-1}` in
    /// phase coordinates. Only attempted for `kn ≤ 4` and affine relations.
    pub fn inverse_legendre(&self) -> Result<CoordinateMap> {
        let c = self.chart();
        if c.k * c.n > 4 {
            return Err(Error::NotInvertible(format!("kn = {} exceeds the symbolic inversion limit", c.k * c.n)));
        }
        let vars = c.q_block(c.k..2 * c.k);
        let eqs: Vec<Expr> = self.graph.iter().flatten().cloned().collect();
        let sol = solve_affine(&eqs, &vars)
            .ok_or_else(|| Error::NotInvertible("momenta are not affine in the higher velocities".into()))?;
        if !sol.free.is_empty() || !sol.residuals.is_empty() {
            return Err(Error::NotInvertible("momenta do not determine the higher velocities".into()));
        }
        let mut images = sol.solved;
        for s in c.q_block(0..c.k) {
            images.insert(s.clone(), Expr::symbol(s));
        }
        Ok(CoordinateMap::new(images))
    }

    /// `X_h = FL_* X_L` on `T*(T^{k-1}Q)` together with `h`.
    pub fn recover_hamiltonian_field(&self, x_l: &VectorFieldExpr) -> Result<HamiltonianField> {
        let c = self.chart();
        let inverse = self.inverse_legendre()?;
        let mut field = VectorFieldExpr::new();
        for s in c.q_block(0..c.k) {
            field.set(s.clone(), inverse.pull_function(&x_l.get(&s))?);
        }
        for r in 0..c.k {
            for a in 0..c.n {
                let rate = x_l.apply(self.system.momentum(r, a));
                field.set(c.p(r, a), inverse.pull_function(&rate)?);
            }
        }
        let hamiltonian = inverse.pull_function(self.system.energy())?;
        let residual = canonical_omega(c).interior(&field).sub(&DifferentialForm::d_function(&hamiltonian));
        Ok(HamiltonianField { field, hamiltonian, inverse, verified: residual.is_zero() })
    }
}
