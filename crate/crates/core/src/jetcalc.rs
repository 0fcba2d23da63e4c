//! Jet calculus on `T^kQ`: total time derivative, momenta, energy, Lagrangian
//! forms, Hessian classification, Euler-Lagrange expressions and semisprays.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::{CoordinateMap, DifferentialForm, VectorFieldExpr};
use crate::symbolic::expr::factorial_ratio;
use crate::symbolic::linalg::{determinant, numeric_rank};
use crate::symbolic::{is_zero, ChartSpec, Compiled, Expr, SamplingPolicy, Symbol, ZeroVerdict};

/// Tulczyjew derivation `d_T f = Σ q_{i+1}^A ∂f/∂q_i^A`.
pub fn tulczyjew(f: &Expr) -> Result<Expr> {
    let syms = f.free_symbols();
    if let Some(s) = syms.iter().find(|s| s.is_p()) {
        return Err(Error::Invalid(format!("total derivative of an expression containing momentum {s}")));
    }
    let terms: Vec<Expr> = syms
        .iter()
        .filter(|s| s.is_q())
        .map(|s| Expr::symbol(s.raised().expect("q symbol")) * f.diff(s))
        .collect();
    Ok(Expr::sum_all(&terms))
}

/// `d_T` applied `times` times.
pub fn tulczyjew_pow(f: &Expr, times: usize) -> Result<Expr> {
    let mut g = f.clone();
    for _ in 0..times {
        g = tulczyjew(&g)?;
    }
    Ok(g)
}

/// True when `e` is a nonzero constant times a monomial in declared-nonzero
/// parameters, i.e. nonzero on the whole chart.
pub fn provably_nonzero(chart: &ChartSpec, e: &Expr) -> bool {
    if e.is_zero() {
        return false;
    }
    let num = e.numer();
    if num.len() != 1 {
        return false;
    }
    num.terms()[0].0.factors().iter().all(|(v, _)| match v.as_symbol() {
        Some(Symbol::Param(name)) => chart.is_nonzero_param(name),
        _ => false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianVerdict {
    Regular,
    Singular,
    GenericallyRegular,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleEvidence {
    pub samples: usize,
    /// Numeric rank of the Hessian at each sample (or 1/0 for a nonvanishing
    /// determinant sample).
    pub ranks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HessianReport {
    pub matrix: Vec<Vec<Expr>>,
    pub determinant: Option<Expr>,
    pub verdict: HessianVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<SampleEvidence>,
}

impl HessianReport {
    pub fn is_regular(&self) -> bool {
        self.verdict != HessianVerdict::Singular
    }
}

/// Largest `n` for which the Hessian determinant is expanded symbolically.
pub const SYMBOLIC_DET_MAX_N: usize = 4;

/// A Lagrangian on `T^kQ` with its derived quantities, computed eagerly.
#[derive(Clone, Debug)]
pub struct LagrangianSystem {
    chart: ChartSpec,
    lagrangian: Expr,
    momenta: Vec<Vec<Expr>>,
    energy: Expr,
    hessian: Vec<Vec<Expr>>,
    theta: DifferentialForm,
    omega: DifferentialForm,
}

impl LagrangianSystem {
    pub fn new(chart: ChartSpec, lagrangian: Expr) -> Result<LagrangianSystem> {
        for s in lagrangian.free_symbols() {
            match &s {
                Symbol::Q { order, comp } => {
                    let comp_ok = if chart.n == 1 { *comp == 0 } else { *comp >= 1 && (*comp as usize) <= chart.n };
                    if *order as usize > chart.k || !comp_ok {
                        return Err(Error::Invalid(format!("Lagrangian symbol {s} is outside the chart")));
                    }
                }
                Symbol::Param(name) if chart.is_param(name) => {}
                _ => return Err(Error::Invalid(format!("Lagrangian may not contain {s}"))),
            }
        }
        let (n, k) = (chart.n, chart.k);
        let mut momenta = vec![Vec::new(); k];
        momenta[k - 1] = (0..n).map(|a| lagrangian.diff(&chart.q(k, a))).collect();
        for r in (1..k).rev() {
            let row: Vec<Expr> = (0..n)
                .map(|a| Ok(lagrangian.diff(&chart.q(r, a)) - tulczyjew(&momenta[r][a])?))
                .collect::<Result<_>>()?;
            momenta[r - 1] = row;
        }
        let mut pieces = Vec::with_capacity(k * n + 1);
        for r in 1..=k {
            for a in 0..n {
                pieces.push(chart.qe(r, a) * &momenta[r - 1][a]);
            }
        }
        pieces.push(-&lagrangian);
        let energy = Expr::sum_all(&pieces);
        let hessian: Vec<Vec<Expr>> = (0..n)
            .map(|a| (0..n).map(|b| momenta[k - 1][a].diff(&chart.q(k, b))).collect())
            .collect();
        let mut theta = DifferentialForm::zero(1);
        for r in 1..=k {
            for a in 0..n {
                theta = theta.add(&DifferentialForm::term(vec![chart.q(r - 1, a)], momenta[r - 1][a].clone()));
            }
        }
        let omega = theta.exterior_derivative().map_coeffs(|c| -c);
        Ok(LagrangianSystem { chart, lagrangian, momenta, energy, hessian, theta, omega })
    }

    pub fn chart(&self) -> &ChartSpec {
        &self.chart
    }

    pub fn lagrangian(&self) -> &Expr {
        &self.lagrangian
    }

    /// `p̂^r_A` for `0 ≤ r ≤ k-1`, indexed `[r][A]`.
    pub fn momenta(&self) -> &[Vec<Expr>] {
        &self.momenta
    }

    pub fn momentum(&self, r: usize, a: usize) -> &Expr {
        &self.momenta[r][a]
    }

    pub fn energy(&self) -> &Expr {
        &self.energy
    }

    pub fn hessian_matrix(&self) -> &[Vec<Expr>] {
        &self.hessian
    }

    pub fn theta(&self) -> &DifferentialForm {
        &self.theta
    }

    pub fn omega(&self) -> &DifferentialForm {
        &self.omega
    }

    /// `(θ_L, ω_L)`.
    pub fn lagrangian_forms(&self) -> (DifferentialForm, DifferentialForm) {
        (self.theta.clone(), self.omega.clone())
    }

    /// `EL_A = Σ_i (-1)^i d_T^i(∂L/∂q_i^A)`, living on order `2k`.
    pub fn euler_lagrange(&self) -> Result<Vec<Expr>> {
        (0..self.chart.n)
            .map(|a| Ok(self.lagrangian.diff(&self.chart.q(0, a)) - tulczyjew(&self.momenta[0][a])?))
            .collect()
    }

    /// Legendre-Ostrogradsky map `T^{2k-1}Q → T*(T^{k-1}Q)`.
    pub fn legendre_map(&self) -> CoordinateMap {
        let c = &self.chart;
        let mut images = BTreeMap::new();
        for s in c.q_block(0..c.k) {
            images.insert(s.clone(), Expr::symbol(s));
        }
        for r in 0..c.k {
            for a in 0..c.n {
                images.insert(c.p(r, a), self.momenta[r][a].clone());
            }
        }
        CoordinateMap::new(images)
    }

    /// Substitution `p^r_A ↦ p̂^r_A`, i.e. restriction to the graph of the
    /// Legendre-Ostrogradsky map.
    pub fn graph_substitution(&self) -> BTreeMap<Symbol, Expr> {
        let c = &self.chart;
        let mut m = BTreeMap::new();
        for r in 0..c.k {
            for a in 0..c.n {
                m.insert(c.p(r, a), self.momenta[r][a].clone());
            }
        }
        m
    }

    pub fn hessian(&self, policy: &SamplingPolicy) -> HessianReport {
        let matrix = self.hessian.clone();
        let n = self.chart.n;
        if n <= SYMBOLIC_DET_MAX_N {
            let det = determinant(&matrix);
            let (verdict, evidence) = if det.is_zero() {
                (HessianVerdict::Singular, None)
            } else if provably_nonzero(&self.chart, &det) {
                (HessianVerdict::Regular, None)
            } else {
                match is_zero(&det, policy) {
                    ZeroVerdict::NumericallyZero => {
                        (HessianVerdict::Singular, Some(SampleEvidence { samples: policy.samples, ranks: vec![0; policy.samples] }))
                    }
                    ZeroVerdict::ProvenZero => (HessianVerdict::Singular, None),
                    ZeroVerdict::ProvenNonzero | ZeroVerdict::Unknown => {
                        let ev = self.numeric_rank_evidence(policy);
                        let full = ev.ranks.iter().any(|r| *r == n);
                        (if full { HessianVerdict::GenericallyRegular } else { HessianVerdict::Singular }, Some(ev))
                    }
                }
            };
            return HessianReport { matrix, determinant: Some(det), verdict, evidence };
        }
        let ev = self.numeric_rank_evidence(policy);
        let verdict = if !ev.ranks.is_empty() && ev.ranks.iter().all(|r| *r == n) {
            HessianVerdict::GenericallyRegular
        } else {
            HessianVerdict::Singular
        };
        HessianReport { matrix, determinant: None, verdict, evidence: Some(ev) }
    }

    fn numeric_rank_evidence(&self, policy: &SamplingPolicy) -> SampleEvidence {
        let n = self.chart.n;
        let mut inputs = self.chart.q_block(0..self.chart.k + 1);
        inputs.extend(self.chart.param_symbols());
        let compiled: Vec<Vec<Option<Compiled>>> = self
            .hessian
            .iter()
            .map(|row| row.iter().map(|e| Compiled::new(e, &inputs).ok()).collect())
            .collect();
        let mut rng = policy.rng();
        let mut ranks = Vec::new();
        let mut attempts = 0;
        while ranks.len() < policy.samples && attempts < policy.samples + policy.max_retries {
            attempts += 1;
            let x = policy.random_values(inputs.len(), &mut rng);
            let mut m = DMatrix::zeros(n, n);
            let mut ok = true;
            for i in 0..n {
                for j in 0..n {
                    match compiled[i][j].as_ref().map(|c| c.eval(&x)) {
                        Some(Ok(v)) if v.is_finite() => m[(i, j)] = v,
                        _ => ok = false,
                    }
                }
            }
            if ok {
                ranks.push(numeric_rank(&m, policy.tol));
            }
        }
        SampleEvidence { samples: ranks.len(), ranks }
    }
}

/// Top coordinate order of the Lagrangian phase space `T^{2k-1}Q`.
fn top_order(chart: &ChartSpec) -> usize {
    2 * chart.k - 1
}

/// `Δ_r = Σ_i (r+i)!/i! q_{i+1}^A ∂/∂q_{r+i}^A` on `T^{2k-1}Q`.
pub fn canonical_field(chart: &ChartSpec, r: usize) -> VectorFieldExpr {
    let m = top_order(chart);
    let mut x = VectorFieldExpr::new();
    for i in 0..=m.saturating_sub(r) {
        if r + i > m {
            break;
        }
        let c = Expr::from_rational(factorial_ratio((r + i) as u32, i as u32));
        for a in 0..chart.n {
            x.set(chart.q(r + i, a), &c * &chart.qe(i + 1, a));
        }
    }
    x
}

/// `J_r(X) = Σ_i (r+i)!/i! X(q_i^A) ∂/∂q_{r+i}^A` on `T^{2k-1}Q`.
pub fn vertical_endomorphism(chart: &ChartSpec, r: usize, x: &VectorFieldExpr) -> VectorFieldExpr {
    let m = top_order(chart);
    let mut out = VectorFieldExpr::new();
    for i in 0..=m.saturating_sub(r) {
        if r + i > m {
            break;
        }
        let c = Expr::from_rational(factorial_ratio((r + i) as u32, i as u32));
        for a in 0..chart.n {
            out.set(chart.q(r + i, a), &c * &x.get(&chart.q(i, a)));
        }
    }
    out
}

/// `J_r(X) = Δ_r`.
pub fn is_semispray_of_type(chart: &ChartSpec, x: &VectorFieldExpr, r: usize) -> bool {
    r >= 1 && r <= top_order(chart) && vertical_endomorphism(chart, r, x) == canonical_field(chart, r)
}

/// Smallest `r` for which `X` is a semispray of type `r`.
pub fn semispray_type(x: &VectorFieldExpr, chart: &ChartSpec) -> Option<usize> {
    (1..=top_order(chart)).find(|&r| is_semispray_of_type(chart, x, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::parse_system;

    fn pu() -> LagrangianSystem {
        let src = parse_system("system(dim=1, order=2) params(w, g) nonzero(g) L = 1/2*(q1^2 - w^2*q0^2 - g*q2^2)").unwrap();
        LagrangianSystem::new(src.chart, src.lagrangian).unwrap()
    }

    fn ex(s: &str, c: &ChartSpec) -> Expr {
        crate::symbolic::parse_expr(s, c).unwrap()
    }

    #[test]
    fn tulczyjew_examples() {
        let c = ChartSpec::new(1, 2).with_param("g", None);
        assert_eq!(tulczyjew(&ex("q0", &c)).unwrap(), ex("q1", &c));
        assert_eq!(tulczyjew(&ex("-g*q2", &c)).unwrap(), ex("-g*q3", &c));
        assert_eq!(tulczyjew(&ex("q1^2", &c)).unwrap(), ex("2*q1*q2", &c));
        assert!(tulczyjew(&ex("p0*q1", &c)).is_err());
    }

    #[test]
    fn pais_uhlenbeck_quantities() {
        let s = pu();
        let c = s.chart().clone();
        assert_eq!(s.momentum(0, 0), &ex("q1 + g*q3", &c));
        assert_eq!(s.momentum(1, 0), &ex("-g*q2", &c));
        assert_eq!(s.energy(), &ex("1/2*q1^2 + 1/2*w^2*q0^2 - 1/2*g*q2^2 + g*q1*q3", &c));
        assert_eq!(s.euler_lagrange().unwrap(), vec![ex("-w^2*q0 - q2 - g*q4", &c)]);
        let theta = s.theta();
        assert_eq!(theta.coeff(&[c.q(0, 0)]), ex("q1 + g*q3", &c));
        assert_eq!(theta.coeff(&[c.q(1, 0)]), ex("-g*q2", &c));
        assert!(s.omega().exterior_derivative().is_zero());
        let h = s.hessian(&SamplingPolicy::default());
        assert_eq!(h.determinant, Some(ex("-g", &c)));
        assert_eq!(h.verdict, HessianVerdict::Regular);
    }

    #[test]
    fn free_particle_and_null_lagrangian() {
        let src = parse_system("system(dim=1, order=1) L = 1/2*q1^2").unwrap();
        let s = LagrangianSystem::new(src.chart.clone(), src.lagrangian).unwrap();
        let c = src.chart;
        assert_eq!(s.momentum(0, 0), &c.qe(1, 0));
        assert_eq!(s.energy(), &ex("1/2*q1^2", &c));
        assert_eq!(s.omega(), &DifferentialForm::term(vec![c.q(0, 0), c.q(1, 0)], Expr::one()));
        assert_eq!(s.euler_lagrange().unwrap(), vec![ex("-q2", &c)]);
        let null = LagrangianSystem::new(c.clone(), c.qe(1, 0)).unwrap();
        assert!(null.euler_lagrange().unwrap()[0].is_zero());
    }

    #[test]
    fn simple_regular_hessian() {
        let src = parse_system("system(dim=1, order=2) L = 1/2*q2^2 + q1*q2").unwrap();
        let s = LagrangianSystem::new(src.chart, src.lagrangian).unwrap();
        let h = s.hessian(&SamplingPolicy::default());
        assert_eq!(h.matrix, vec![vec![Expr::one()]]);
        assert_eq!(h.verdict, HessianVerdict::Regular);
    }

    #[test]
    fn semispray_classification() {
        let c = ChartSpec::new(1, 2);
        let f = Expr::symbol(Symbol::unknown(crate::symbolic::UnknownKind::HighF, 3, 0));
        let x1 = VectorFieldExpr::from_components([
            (c.q(0, 0), c.qe(1, 0)),
            (c.q(1, 0), c.qe(2, 0)),
            (c.q(2, 0), c.qe(3, 0)),
            (c.q(3, 0), f.clone()),
        ]);
        assert_eq!(semispray_type(&x1, &c), Some(1));
        let x2 = VectorFieldExpr::from_components([
            (c.q(0, 0), c.qe(1, 0)),
            (c.q(1, 0), c.qe(2, 0)),
            (c.q(2, 0), Expr::param("A")),
            (c.q(3, 0), f),
        ]);
        assert_eq!(semispray_type(&x2, &c), Some(2));
        assert!(is_semispray_of_type(&c, &x1, 3));
        assert_eq!(semispray_type(&VectorFieldExpr::new(), &c), None);
    }

    #[test]
    fn canonical_field_coefficients() {
        let c = ChartSpec::new(1, 2);
        let d1 = canonical_field(&c, 1);
        assert_eq!(d1.get(&c.q(1, 0)), c.qe(1, 0));
        assert_eq!(d1.get(&c.q(3, 0)), Expr::from_int(3) * c.qe(3, 0));
        let d2 = canonical_field(&c, 2);
        assert_eq!(d2.get(&c.q(2, 0)), Expr::from_int(2) * c.qe(1, 0));
        assert_eq!(d2.get(&c.q(3, 0)), Expr::from_int(6) * c.qe(2, 0));
    }

    #[test]
    fn lagrangian_outside_chart_is_rejected() {
        let c = ChartSpec::new(1, 1);
        assert!(LagrangianSystem::new(c.clone(), Expr::symbol(Symbol::q(2, 0))).is_err());
        assert!(LagrangianSystem::new(c, Expr::symbol(Symbol::p(0, 0))).is_err());
    }
}
