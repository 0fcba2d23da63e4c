//! Coordinate differential forms, vector fields and coordinate maps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::DMatrix;
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};

use crate::error::{Error, EvalError, Result};
use crate::symbolic::{Expr, NumericPoint, Symbol};

/// Sorts a basis multi-index in place; returns the permutation sign, or
/// `None` when a covector repeats.
fn sort_basis(basis: &mut [Symbol]) -> Option<i32> {
    let mut sign = 1;
    for i in 1..basis.len() {
        let mut j = i;
        while j > 0 && basis[j - 1] > basis[j] {
            basis.swap(j - 1, j);
            sign = -sign;
            j -= 1;
        }
    }
    if basis.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some(sign)
}

/// A differential form `Σ c_I dx^{i1} ∧ … ∧ dx^{ip}` with strictly increasing
/// basis indices.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferentialForm {
    degree: usize,
    terms: BTreeMap<Vec<Symbol>, Expr>,
}

impl DifferentialForm {
    pub fn zero(degree: usize) -> DifferentialForm {
        DifferentialForm { degree, terms: BTreeMap::new() }
    }

    /// The function `f` as a 0-form.
    pub fn function(f: Expr) -> DifferentialForm {
        let mut w = DifferentialForm::zero(0);
        w.add_term(Vec::new(), f);
        w
    }

    /// The basis covector `dx`.
    pub fn basis(x: Symbol) -> DifferentialForm {
        DifferentialForm::term(vec![x], Expr::one())
    }

    /// `coeff · dx^{b1} ∧ …` with the basis in any order.
    pub fn term(basis: Vec<Symbol>, coeff: Expr) -> DifferentialForm {
        let mut w = DifferentialForm::zero(basis.len());
        w.add_term(basis, coeff);
        w
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[Symbol], &Expr)> {
        self.terms.iter().map(|(b, c)| (b.as_slice(), c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of a basis multi-index given in any order.
    pub fn coeff(&self, basis: &[Symbol]) -> Expr {
        let mut b = basis.to_vec();
        match sort_basis(&mut b) {
            Some(s) => {
                let c = self.terms.get(&b).cloned().unwrap_or_else(Expr::zero);
                if s < 0 {
                    -c
                } else {
                    c
                }
            }
            None => Expr::zero(),
        }
    }

    fn add_term(&mut self, mut basis: Vec<Symbol>, coeff: Expr) {
        assert_eq!(basis.len(), self.degree, "basis length does not match the form degree");
        if coeff.is_zero() {
            return;
        }
        let Some(sign) = sort_basis(&mut basis) else { return };
        let c = if sign < 0 { -coeff } else { coeff };
        match self.terms.remove(&basis) {
            Some(old) => {
                let s = &old + &c;
                if !s.is_zero() {
                    self.terms.insert(basis, s);
                }
            }
            None => {
                self.terms.insert(basis, c);
            }
        }
    }

    fn from_groups(degree: usize, groups: BTreeMap<Vec<Symbol>, Vec<Expr>>) -> DifferentialForm {
        let terms = groups
            .into_iter()
            .filter_map(|(b, cs)| {
                let c = Expr::sum_all(&cs);
                (!c.is_zero()).then_some((b, c))
            })
            .collect();
        DifferentialForm { degree, terms }
    }

    /// Applies `f` to every coefficient, dropping those that become zero.
    pub fn map_coeffs(&self, f: impl Fn(&Expr) -> Expr) -> DifferentialForm {
        let terms = self
            .terms
            .iter()
            .filter_map(|(b, c)| {
                let v = f(c);
                (!v.is_zero()).then(|| (b.clone(), v))
            })
            .collect();
        DifferentialForm { degree: self.degree, terms }
    }

    pub fn scale(&self, f: &Expr) -> DifferentialForm {
        self.map_coeffs(|c| c * f)
    }

    pub fn substitute(&self, map: &BTreeMap<Symbol, Expr>) -> DifferentialForm {
        self.map_coeffs(|c| c.substitute(map))
    }

    pub fn add(&self, other: &DifferentialForm) -> DifferentialForm {
        assert_eq!(self.degree, other.degree, "adding forms of different degree");
        let mut groups: BTreeMap<Vec<Symbol>, Vec<Expr>> = BTreeMap::new();
        for (b, c) in self.terms.iter().chain(&other.terms) {
            groups.entry(b.clone()).or_default().push(c.clone());
        }
        DifferentialForm::from_groups(self.degree, groups)
    }

    pub fn sub(&self, other: &DifferentialForm) -> DifferentialForm {
        self.add(&other.map_coeffs(|c| -c))
    }

    /// Exterior derivative of a function.
    pub fn d_function(f: &Expr) -> DifferentialForm {
        let mut w = DifferentialForm::zero(1);
        for s in f.free_symbols() {
            if s.is_coordinate() {
                let c = f.diff(&s);
                w.add_term(vec![s], c);
            }
        }
        w
    }

    pub fn exterior_derivative(&self) -> DifferentialForm {
        let mut groups: BTreeMap<Vec<Symbol>, Vec<Expr>> = BTreeMap::new();
        for (b, c) in &self.terms {
            for s in c.free_symbols() {
                if !s.is_coordinate() {
                    continue;
                }
                let mut basis = Vec::with_capacity(b.len() + 1);
                basis.push(s.clone());
                basis.extend(b.iter().cloned());
                let Some(sign) = sort_basis(&mut basis) else { continue };
                let dc = c.diff(&s);
                groups.entry(basis).or_default().push(if sign < 0 { -dc } else { dc });
            }
        }
        DifferentialForm::from_groups(self.degree + 1, groups)
    }

    pub fn wedge(&self, other: &DifferentialForm) -> DifferentialForm {
        let mut groups: BTreeMap<Vec<Symbol>, Vec<Expr>> = BTreeMap::new();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let mut basis: Vec<Symbol> = a.iter().chain(b.iter()).cloned().collect();
                let Some(sign) = sort_basis(&mut basis) else { continue };
                let c = ca * cb;
                groups.entry(basis).or_default().push(if sign < 0 { -c } else { c });
            }
        }
        DifferentialForm::from_groups(self.degree + other.degree, groups)
    }

    /// Interior product `i(X)ω`; a 0-form maps to zero.
    pub fn interior(&self, x: &VectorFieldExpr) -> DifferentialForm {
        if self.degree == 0 {
            return DifferentialForm::zero(0);
        }
        let mut groups: BTreeMap<Vec<Symbol>, Vec<Expr>> = BTreeMap::new();
        for (b, c) in &self.terms {
            for (pos, s) in b.iter().enumerate() {
                let xs = x.get(s);
                if xs.is_zero() {
                    continue;
                }
                let mut rest = b.clone();
                rest.remove(pos);
                let v = &xs * c;
                groups.entry(rest).or_default().push(if pos % 2 == 1 { -v } else { v });
            }
        }
        DifferentialForm::from_groups(self.degree - 1, groups)
    }

    /// Pullback along a coordinate map into this form's chart.
    pub fn pullback(&self, phi: &CoordinateMap) -> Result<DifferentialForm> {
        let mut acc = DifferentialForm::zero(self.degree);
        for (b, c) in &self.terms {
            let mut piece = DifferentialForm::function(phi.pull_function(c)?);
            for s in b {
                piece = piece.wedge(&DifferentialForm::d_function(phi.image(s)?));
            }
            acc = acc.add(&piece);
        }
        Ok(acc)
    }

    /// Coefficient matrix of a 2-form in the given coordinate ordering, so
    /// that `ω(u, v) = uᵀ M v`.
    pub fn matrix(&self, coords: &[Symbol]) -> Vec<Vec<Expr>> {
        assert_eq!(self.degree, 2, "coefficient matrix of a non-2-form");
        let n = coords.len();
        let mut m = vec![vec![Expr::zero(); n]; n];
        let index: BTreeMap<&Symbol, usize> = coords.iter().enumerate().map(|(i, s)| (s, i)).collect();
        for (b, c) in &self.terms {
            if let (Some(&i), Some(&j)) = (index.get(&b[0]), index.get(&b[1])) {
                m[i][j] = c.clone();
                m[j][i] = -c;
            }
        }
        m
    }

    pub fn numeric_matrix(&self, coords: &[Symbol], pt: &NumericPoint) -> std::result::Result<DMatrix<f64>, EvalError> {
        let m = self.matrix(coords);
        let n = coords.len();
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if !m[i][j].is_zero() {
                    out[(i, j)] = m[i][j].eval(pt)?;
                }
            }
        }
        Ok(out)
    }

    /// All coordinate symbols used by basis indices or coefficients.
    pub fn support(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        for (b, c) in &self.terms {
            out.extend(b.iter().cloned());
            out.extend(c.free_symbols().into_iter().filter(|s| s.is_coordinate()));
        }
        out
    }
}

impl fmt::Display for DifferentialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (b, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            if b.is_empty() {
                write!(f, "{c}")?;
                continue;
            }
            let basis: Vec<String> = b.iter().map(|s| format!("d{s}")).collect();
            write!(f, "({c})*{}", basis.join("^"))?;
        }
        Ok(())
    }
}

struct FormTerm<'a>(&'a [Symbol], &'a Expr);

impl Serialize for FormTerm<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Term", 2)?;
        st.serialize_field("basis", self.0)?;
        st.serialize_field("coeff", self.1)?;
        st.end()
    }
}

impl Serialize for DifferentialForm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let terms: Vec<FormTerm> = self.terms.iter().map(|(b, c)| FormTerm(b, c)).collect();
        let mut st = s.serialize_struct("DifferentialForm", 2)?;
        st.serialize_field("degree", &self.degree)?;
        st.serialize_field("terms", &terms)?;
        st.end()
    }
}

/// A vector field `Σ X^s ∂/∂s` with expression coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorFieldExpr {
    comps: BTreeMap<Symbol, Expr>,
}

impl VectorFieldExpr {
    pub fn new() -> VectorFieldExpr {
        VectorFieldExpr::default()
    }

    pub fn from_components(items: impl IntoIterator<Item = (Symbol, Expr)>) -> VectorFieldExpr {
        let mut x = VectorFieldExpr::new();
        for (s, c) in items {
            x.set(s, c);
        }
        x
    }

    /// The coordinate field `∂/∂s`.
    pub fn partial(s: Symbol) -> VectorFieldExpr {
        VectorFieldExpr::from_components([(s, Expr::one())])
    }

    pub fn set(&mut self, s: Symbol, c: Expr) {
        if c.is_zero() {
            self.comps.remove(&s);
        } else {
            self.comps.insert(s, c);
        }
    }

    pub fn get(&self, s: &Symbol) -> Expr {
        self.comps.get(s).cloned().unwrap_or_else(Expr::zero)
    }

    pub fn components(&self) -> impl Iterator<Item = (&Symbol, &Expr)> {
        self.comps.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.comps.is_empty()
    }

    /// `X(f) = Σ X^s ∂f/∂s`.
    pub fn apply(&self, f: &Expr) -> Expr {
        let terms: Vec<Expr> = self
            .comps
            .iter()
            .filter(|(s, _)| f.depends_on(s))
            .map(|(s, c)| c * &f.diff(s))
            .collect();
        Expr::sum_all(&terms)
    }

    pub fn map_coeffs(&self, f: impl Fn(&Expr) -> Expr) -> VectorFieldExpr {
        VectorFieldExpr::from_components(self.comps.iter().map(|(s, c)| (s.clone(), f(c))))
    }

    pub fn substitute(&self, map: &BTreeMap<Symbol, Expr>) -> VectorFieldExpr {
        self.map_coeffs(|c| c.substitute(map))
    }

    /// Keeps only the components whose direction satisfies `keep`.
    pub fn restrict(&self, keep: impl Fn(&Symbol) -> bool) -> VectorFieldExpr {
        VectorFieldExpr { comps: self.comps.iter().filter(|(s, _)| keep(s)).map(|(s, c)| (s.clone(), c.clone())).collect() }
    }

    pub fn add(&self, other: &VectorFieldExpr) -> VectorFieldExpr {
        let mut out = self.clone();
        for (s, c) in &other.comps {
            let v = &out.get(s) + c;
            out.set(s.clone(), v);
        }
        out
    }

    pub fn scale(&self, f: &Expr) -> VectorFieldExpr {
        self.map_coeffs(|c| c * f)
    }

    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        self.comps.values().flat_map(|c| c.free_symbols()).collect()
    }
}

impl fmt::Display for VectorFieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.comps.is_empty() {
            return write!(f, "0");
        }
        for (i, (s, c)) in self.comps.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({c})*d/d{s}")?;
        }
        Ok(())
    }
}

impl Serialize for VectorFieldExpr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.comps.len()))?;
        for (k, v) in &self.comps {
            m.serialize_entry(&k.to_string(), v)?;
        }
        m.end()
    }
}

/// A map between charts given by the images of the target coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoordinateMap {
    images: BTreeMap<Symbol, Expr>,
}

impl CoordinateMap {
    pub fn new(images: BTreeMap<Symbol, Expr>) -> CoordinateMap {
        CoordinateMap { images }
    }

    pub fn identity(coords: &[Symbol]) -> CoordinateMap {
        CoordinateMap { images: coords.iter().map(|s| (s.clone(), Expr::symbol(s.clone()))).collect() }
    }

    pub fn image(&self, s: &Symbol) -> Result<&Expr> {
        self.images.get(s).ok_or_else(|| Error::Invalid(format!("coordinate map does not bind {s}")))
    }

    pub fn images(&self) -> &BTreeMap<Symbol, Expr> {
        &self.images
    }

    pub fn targets(&self) -> impl Iterator<Item = &Symbol> {
        self.images.keys()
    }

    /// `f ∘ φ`; every coordinate of `f` must be bound.
    pub fn pull_function(&self, f: &Expr) -> Result<Expr> {
        for s in f.free_symbols() {
            if s.is_coordinate() && !self.images.contains_key(&s) {
                return Err(Error::Invalid(format!("coordinate map does not bind {s}")));
            }
        }
        Ok(f.substitute(&self.images))
    }

    /// `self ∘ inner`: first apply `inner`, then `self`.
    pub fn compose(&self, inner: &CoordinateMap) -> Result<CoordinateMap> {
        let mut images = BTreeMap::new();
        for (s, e) in &self.images {
            images.insert(s.clone(), inner.pull_function(e)?);
        }
        Ok(CoordinateMap { images })
    }
}

impl Serialize for CoordinateMap {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.images.len()))?;
        for (k, v) in &self.images {
            m.serialize_entry(&k.to_string(), v)?;
        }
        m.end()
    }
}
