use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::expr::Expr;
use super::symbol::Symbol;
use crate::error::EvalError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: String,
    pub value: Option<f64>,
}

/// Coordinate universe of a system: configuration dimension `n`, Lagrangian
/// order `k`, and named parameters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChartSpec {
    pub n: usize,
    pub k: usize,
    pub params: Vec<ParamSpec>,
    pub nonzero: BTreeSet<String>,
}

impl ChartSpec {
    pub fn new(n: usize, k: usize) -> ChartSpec {
        ChartSpec { n, k, params: Vec::new(), nonzero: BTreeSet::new() }
    }

    pub fn with_param(mut self, name: &str, value: Option<f64>) -> ChartSpec {
        self.params.push(ParamSpec { name: name.to_string(), value });
        self
    }

    pub fn with_nonzero(mut self, name: &str) -> ChartSpec {
        self.nonzero.insert(name.to_string());
        self
    }

    fn comp(&self, a: usize) -> usize {
        assert!(a < self.n, "component {a} out of range for n = {}", self.n);
        if self.n == 1 {
            0
        } else {
            a + 1
        }
    }

    /// `q_i^A` with `a` the 0-based component.
    pub fn q(&self, i: usize, a: usize) -> Symbol {
        Symbol::q(i, self.comp(a))
    }

    pub fn p(&self, i: usize, a: usize) -> Symbol {
        Symbol::p(i, self.comp(a))
    }

    pub fn qe(&self, i: usize, a: usize) -> Expr {
        Expr::symbol(self.q(i, a))
    }

    pub fn pe(&self, i: usize, a: usize) -> Expr {
        Expr::symbol(self.p(i, a))
    }

    pub fn unknown(&self, kind: super::symbol::UnknownKind, i: usize, a: usize) -> Symbol {
        Symbol::unknown(kind, i, self.comp(a))
    }

    /// 0-based component of a chart symbol.
    pub fn component_index(&self, s: &Symbol) -> Option<usize> {
        let c = s.comp()?;
        Some(if self.n == 1 { 0 } else { c - 1 })
    }

    /// `q_i^A` for `i` in `orders`, ordered by `(i, A)`.
    pub fn q_block(&self, orders: std::ops::Range<usize>) -> Vec<Symbol> {
        orders.flat_map(|i| (0..self.n).map(move |a| (i, a))).map(|(i, a)| self.q(i, a)).collect()
    }

    pub fn p_block(&self, orders: std::ops::Range<usize>) -> Vec<Symbol> {
        orders.flat_map(|i| (0..self.n).map(move |a| (i, a))).map(|(i, a)| self.p(i, a)).collect()
    }

    /// Coordinates of `T^{2k-1}Q`.
    pub fn lagrangian_coords(&self) -> Vec<Symbol> {
        self.q_block(0..2 * self.k)
    }

    /// Coordinates of `T*(T^{k-1}Q)`.
    pub fn phase_coords(&self) -> Vec<Symbol> {
        let mut v = self.q_block(0..self.k);
        v.extend(self.p_block(0..self.k));
        v
    }

    /// Coordinates of the unified space `W`, of dimension `3kn`.
    pub fn w_coords(&self) -> Vec<Symbol> {
        let mut v = self.lagrangian_coords();
        v.extend(self.p_block(0..self.k));
        v
    }

    pub fn dim_w(&self) -> usize {
        3 * self.k * self.n
    }

    pub fn param_symbols(&self) -> Vec<Symbol> {
        self.params.iter().map(|p| Symbol::param(&p.name)).collect()
    }

    pub fn is_param(&self, name: &str) -> bool {
        self.params.iter().any(|p| p.name == name)
    }

    pub fn is_nonzero_param(&self, name: &str) -> bool {
        self.nonzero.contains(name)
    }

    /// Numeric bindings declared in the source, overridden by `overrides`.
    pub fn param_values(&self, overrides: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for p in &self.params {
            if let Some(v) = overrides.get(&p.name).copied().or(p.value) {
                m.insert(p.name.clone(), v);
            }
        }
        m
    }

    /// Dot product `Σ_A x_A y_A` of two coordinate families.
    pub fn dot(&self, x: impl Fn(usize) -> Expr, y: impl Fn(usize) -> Expr) -> Expr {
        let terms: Vec<Expr> = (0..self.n).map(|a| x(a) * y(a)).collect();
        Expr::sum_all(&terms)
    }
}

/// Values for coordinates and parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NumericPoint {
    values: BTreeMap<Symbol, f64>,
}

impl NumericPoint {
    pub fn new() -> NumericPoint {
        NumericPoint::default()
    }

    pub fn set(&mut self, s: Symbol, v: f64) {
        self.values.insert(s, v);
    }

    pub fn with(mut self, s: Symbol, v: f64) -> NumericPoint {
        self.set(s, v);
        self
    }

    pub fn get(&self, s: &Symbol) -> Option<f64> {
        self.values.get(s).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Symbol, &f64)> {
        self.values.iter()
    }

    pub fn extend_params(&mut self, params: &BTreeMap<String, f64>) {
        for (k, v) in params {
            self.values.insert(Symbol::param(k), *v);
        }
    }
}

impl FromIterator<(Symbol, f64)> for NumericPoint {
    fn from_iter<I: IntoIterator<Item = (Symbol, f64)>>(iter: I) -> Self {
        NumericPoint { values: iter.into_iter().collect() }
    }
}

impl Expr {
    pub fn eval(&self, pt: &NumericPoint) -> Result<f64, EvalError> {
        self.eval_with(&|s| pt.get(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w_chart_has_dimension_3kn() {
        for (n, k) in [(1, 1), (1, 2), (3, 2), (2, 3)] {
            let c = ChartSpec::new(n, k);
            assert_eq!(c.w_coords().len(), c.dim_w());
            let unique: BTreeSet<_> = c.w_coords().into_iter().collect();
            assert_eq!(unique.len(), 3 * k * n);
        }
    }

    #[test]
    fn eval_half_square() {
        let c = ChartSpec::new(1, 1);
        let e = Expr::ratio(1, 2) * c.qe(1, 0).pow(2);
        let pt = NumericPoint::new().with(c.q(1, 0), 2.0);
        assert_eq!(e.eval(&pt).unwrap(), 2.0);
    }
}
