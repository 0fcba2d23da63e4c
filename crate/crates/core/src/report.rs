//! JSON reports. Every report carries the tool version and the full run
//! configuration, and serializes deterministically.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::constraints::ConstraintLedger;
use crate::dynamics::{IntegratorSettings, Trajectory};
use crate::error::Result;
use crate::forms::{DifferentialForm, VectorFieldExpr};
use crate::jetcalc::{HessianReport, HessianVerdict, LagrangianSystem};
use crate::symbolic::{Expr, SamplingPolicy};
use crate::unified::{CoefficientSolution, HamiltonianField, UnifiedSystem};

pub const TOOL: &str = "unimech";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: String,
    pub command: String,
    pub sampling: SamplingPolicy,
    pub integrator: IntegratorSettings,
    pub init: BTreeMap<String, f64>,
    pub params: BTreeMap<String, f64>,
    pub semispray1: bool,
    pub format: String,
}

#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub body: T,
}

impl<'a, T: Serialize> Report<'a, T> {
    pub fn new(config: &'a RunConfig, body: T) -> Self {
        Report { tool: TOOL, version: VERSION, config, body }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

/// Momenta keyed by their phase-space symbol.
pub fn momenta_map(system: &LagrangianSystem) -> BTreeMap<String, Expr> {
    let c = system.chart();
    let mut m = BTreeMap::new();
    for r in 0..c.k {
        for a in 0..c.n {
            m.insert(c.p(r, a).to_string(), system.momentum(r, a).clone());
        }
    }
    m
}

#[derive(Serialize)]
pub struct MomentaReport {
    pub momenta: BTreeMap<String, Expr>,
    pub energy: Expr,
}

impl MomentaReport {
    pub fn build(system: &LagrangianSystem) -> Self {
        MomentaReport { momenta: momenta_map(system), energy: system.energy().clone() }
    }
}

#[derive(Serialize)]
pub struct EomReport {
    pub lagrangian: Expr,
    pub euler_lagrange: Vec<Expr>,
}

impl EomReport {
    pub fn build(system: &LagrangianSystem) -> Result<Self> {
        Ok(EomReport { lagrangian: system.lagrangian().clone(), euler_lagrange: system.euler_lagrange()? })
    }
}

#[derive(Serialize)]
pub struct AnalyzeReport {
    pub hessian_verdict: HessianVerdict,
    pub hessian: HessianReport,
    pub momenta: BTreeMap<String, Expr>,
    pub energy: Expr,
    #[serde(rename = "H")]
    pub hamiltonian: Expr,
    pub coefficient_solution: CoefficientSolution,
    pub tangency_equations: Vec<Expr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solved_field: Option<VectorFieldExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lagrangian_field: Option<VectorFieldExpr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamiltonian_field: Option<HamiltonianField>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl AnalyzeReport {
    pub fn build(unified: &UnifiedSystem, policy: &SamplingPolicy) -> Self {
        let system = unified.system();
        let hessian = system.hessian(policy);
        let coefficient_solution = unified.solve_coefficients();
        let x = unified.ansatz().substitute(&coefficient_solution.identifications);
        let tangency_equations = unified.tangency_system(&x);
        let mut notes = Vec::new();
        let solved_field = match unified.solve_regular(&hessian) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(e.to_string());
                None
            }
        };
        let lagrangian_field = solved_field.as_ref().map(|f| unified.recover_lagrangian_field(f));
        let hamiltonian_field = match &lagrangian_field {
            Some(xl) => match unified.recover_hamiltonian_field(xl) {
                Ok(h) => Some(h),
                Err(e) => {
                    notes.push(e.to_string());
                    None
                }
            },
            None => None,
        };
        AnalyzeReport {
            hessian_verdict: hessian.verdict,
            hessian,
            momenta: momenta_map(system),
            energy: system.energy().clone(),
            hamiltonian: unified.hamiltonian().clone(),
            coefficient_solution,
            tangency_equations,
            solved_field,
            lagrangian_field,
            hamiltonian_field,
            notes,
        }
    }
}

#[derive(Serialize)]
pub struct UnifiedReport {
    pub dim_w: usize,
    pub coupling: Expr,
    #[serde(rename = "H")]
    pub hamiltonian: Expr,
    pub omega: DifferentialForm,
    pub primary_constraints: Vec<Expr>,
    pub graph_constraints: Vec<Vec<Expr>>,
    pub ansatz: VectorFieldExpr,
    pub coefficient_solution: CoefficientSolution,
    pub tangency_equations: Vec<Expr>,
}

impl UnifiedReport {
    pub fn build(unified: &UnifiedSystem) -> Self {
        let coefficient_solution = unified.solve_coefficients();
        let x = unified.ansatz().substitute(&coefficient_solution.identifications);
        UnifiedReport {
            dim_w: unified.chart().dim_w(),
            coupling: unified.coupling().clone(),
            hamiltonian: unified.hamiltonian().clone(),
            omega: unified.omega().clone(),
            primary_constraints: unified.primary_constraints().to_vec(),
            graph_constraints: unified.graph_constraints().to_vec(),
            ansatz: unified.ansatz(),
            tangency_equations: unified.tangency_system(&x),
            coefficient_solution,
        }
    }
}

#[derive(Serialize)]
pub struct ConstraintsReport<'a> {
    #[serde(flatten)]
    pub ledger: &'a ConstraintLedger,
}

#[derive(Serialize)]
pub struct SimulationReport<'a> {
    pub trajectory: &'a Trajectory,
    /// `max_t |E_L(x_t) - E_L(x_0)|`.
    pub energy_drift: Option<f64>,
    /// Drift of each non-graph constraint, for constrained runs.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub constraint_drift: BTreeMap<String, f64>,
}
