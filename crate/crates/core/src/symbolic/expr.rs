//! Canonical symbolic scalars.
//!
//! An [`Expr`] is a quotient `num / den` where `num` is a polynomial over the
//! rationals that may contain square-root atoms, and `den` is a product of
//! square-root-free, integer-primitive polynomial factors with positive leading
//! coefficients. Every common factor of numerator and denominator is
//! cancelled, so two expressions are equal exactly when they denote the same
//! element of the function field.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::{Arc, OnceLock};

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use super::gcd::{gcd, proven_coprime};
use super::poly::{Coef, Monomial, Poly, Var};
use super::symbol::Symbol;
use crate::error::EvalError;

struct Inner {
    num: Poly,
    den: Vec<(Poly, u32)>,
    den_poly: OnceLock<Poly>,
}

#[derive(Clone)]
pub struct Expr(Arc<Inner>);

impl Expr {
    fn raw(num: Poly, den: Vec<(Poly, u32)>) -> Expr {
        Expr(Arc::new(Inner { num, den, den_poly: OnceLock::new() }))
    }

    pub fn zero() -> Expr {
        Expr::raw(Poly::zero(), Vec::new())
    }

    pub fn one() -> Expr {
        Expr::raw(Poly::one(), Vec::new())
    }

    pub fn from_int(n: i64) -> Expr {
        Expr::raw(Poly::from_int(n), Vec::new())
    }

    pub fn from_rational(c: Coef) -> Expr {
        Expr::raw(Poly::constant(c), Vec::new())
    }

    pub fn ratio(n: i64, d: i64) -> Expr {
        Expr::from_rational(Coef::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn symbol(s: Symbol) -> Expr {
        Expr::raw(Poly::symbol(s), Vec::new())
    }

    pub fn param(name: &str) -> Expr {
        Expr::symbol(Symbol::param(name))
    }

    pub fn from_poly(p: Poly) -> Expr {
        Expr::raw(p, Vec::new())
    }

    /// Builds `num / Π f^e` and brings it to canonical form.
    pub fn from_parts(num: Poly, den: Vec<(Poly, u32)>) -> Expr {
        let mut num = num;
        let mut factors = Vec::new();
        let mut radical = Expr::one();
        for (f, e) in den {
            if e == 0 {
                continue;
            }
            if f.has_sqrt() {
                radical = radical * Expr::from_poly(f).pow(e as i32);
                continue;
            }
            factors.extend(split_factor(&f, &mut num, e));
        }
        let base = canonicalize(num, factors);
        if radical.is_one() {
            base
        } else {
            base * radical.recip()
        }
    }

    pub fn numer(&self) -> &Poly {
        &self.0.num
    }

    pub fn den_factors(&self) -> &[(Poly, u32)] {
        &self.0.den
    }

    /// Expanded denominator.
    pub fn denom(&self) -> &Poly {
        self.0.den_poly.get_or_init(|| {
            let mut d = Poly::one();
            for (f, e) in &self.0.den {
                d = d.mul(&f.pow(*e));
            }
            d
        })
    }

    pub fn is_zero(&self) -> bool {
        self.0.num.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.den.is_empty() && self.0.num.is_one()
    }

    pub fn is_polynomial(&self) -> bool {
        self.0.den.is_empty()
    }

    pub fn as_rational(&self) -> Option<Coef> {
        if self.0.den.is_empty() {
            self.0.num.as_constant()
        } else {
            None
        }
    }

    pub fn is_constant(&self) -> bool {
        self.as_rational().is_some()
    }

    /// Symbols occurring anywhere, including inside radicands.
    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        let mut s = self.0.num.symbols();
        for (f, _) in &self.0.den {
            s.extend(f.symbols());
        }
        s
    }

    pub fn depends_on(&self, s: &Symbol) -> bool {
        self.free_symbols().contains(s)
    }

    /// Number of terms in numerator and denominator, a rough size measure.
    pub fn size(&self) -> usize {
        self.0.num.len() + self.0.den.iter().map(|(f, _)| f.len()).sum::<usize>()
    }

    pub fn recip(&self) -> Expr {
        assert!(!self.is_zero(), "reciprocal of the zero expression");
        let mut top = self.denom().clone();
        let mut bottom = self.0.num.clone();
        // rationalize one square-root atom at a time
        while let Some(atom) = bottom.sqrt_atoms().into_iter().next_back() {
            let r = atom.radicand().unwrap().clone();
            let parts = bottom.coeffs_in(&atom);
            let a = parts.first().cloned().unwrap_or_else(Poly::zero);
            let b = parts.get(1).cloned().unwrap_or_else(Poly::zero);
            let s = Poly::from_var(atom.clone());
            if a.is_zero() {
                // 1/(b s) = s/(b r)
                top = top.mul(&s);
                bottom = b.mul(&r);
                if !bottom.has_sqrt() {
                    let mut den = vec![(b, 1)];
                    den.push((r, 1));
                    return Expr::from_parts(top, den);
                }
            } else {
                let conj = a.sub(&b.mul(&s));
                top = top.mul(&conj);
                bottom = a.mul(&a).sub(&b.mul(&b).mul(&r));
            }
        }
        Expr::from_parts(top, vec![(bottom, 1)])
    }

    pub fn pow(&self, e: i32) -> Expr {
        if e < 0 {
            return self.recip().pow(-e);
        }
        let e = e as u32;
        if e == 0 {
            return Expr::one();
        }
        let num = self.0.num.pow(e);
        let den: Vec<(Poly, u32)> = self.0.den.iter().map(|(f, k)| (f.clone(), k * e)).collect();
        if self.0.num.has_sqrt() {
            Expr::from_parts(num, den)
        } else {
            Expr::raw(num, den)
        }
    }

    /// Principal square root. The argument's denominator `D` is moved out as
    /// `sqrt(N/D) = sqrt(N D) / D`, which assumes `D > 0`.
    pub fn sqrt(&self) -> Expr {
        if self.is_zero() {
            return Expr::zero();
        }
        let radicand = if self.0.den.is_empty() {
            self.0.num.clone()
        } else {
            self.0.num.mul(self.denom())
        };
        let outer = if self.0.den.is_empty() {
            Expr::one()
        } else {
            Expr::raw(Poly::one(), self.0.den.clone())
        };
        sqrt_poly(&radicand) * outer
    }

    pub fn checked_div(&self, other: &Expr) -> Option<Expr> {
        if other.is_zero() {
            None
        } else {
            Some(self * &other.recip())
        }
    }

    /// Partial derivative with respect to `s`, all other symbols held fixed.
    pub fn diff(&self, s: &Symbol) -> Expr {
        let v = Var::Sym(s.clone());
        let num = &self.0.num;
        let dnum = total_diff(num, &v);
        if self.0.den.is_empty() {
            return dnum;
        }
        let dens: Vec<Expr> = self.0.den.iter().map(|(f, _)| total_diff(f, &v)).collect();
        if dens.iter().any(|d| !d.is_polynomial()) {
            // a denominator factor holds a root whose radicand moves with `s`
            let mut result = dnum * Expr::raw(Poly::one(), self.0.den.clone());
            for ((f, e), df) in self.0.den.iter().zip(&dens) {
                if !df.is_zero() {
                    let log_d = df * &Expr::from_parts(Poly::one(), vec![(f.clone(), 1)]);
                    result = result - self * &(Expr::from_int(*e as i64) * log_d);
                }
            }
            return result;
        }
        let mut result = dnum * Expr::raw(Poly::one(), self.0.den.clone());
        // - num * Σ e f' / f over den
        let mut sum = Poly::zero();
        let mut den: Vec<(Poly, u32)> = self.0.den.clone();
        let mut any = false;
        for (i, ((_, e), df)) in self.0.den.iter().zip(&dens).enumerate() {
            if df.is_zero() {
                continue;
            }
            any = true;
            let mut t = df.numer().scale(&Coef::from_integer(BigInt::from(*e)));
            for (j, (g, _)) in self.0.den.iter().enumerate() {
                if j != i && !dens[j].is_zero() {
                    t = t.mul(g);
                }
            }
            sum = sum.add(&t);
        }
        if any {
            for ((_, e), df) in den.iter_mut().zip(&dens) {
                if !df.is_zero() {
                    *e += 1;
                }
            }
            result = result - Expr::from_parts(num.mul(&sum), den);
        }
        result
    }

    /// Simultaneous substitution of symbols by expressions.
    pub fn substitute(&self, map: &BTreeMap<Symbol, Expr>) -> Expr {
        if map.is_empty() {
            return self.clone();
        }
        let syms = self.free_symbols();
        if !syms.iter().any(|s| map.contains_key(s)) {
            return self.clone();
        }
        let top = subst_poly(&self.0.num, map);
        let mut bottom = Expr::one();
        for (f, e) in &self.0.den {
            bottom = bottom * subst_poly(f, map).pow(*e as i32);
        }
        top / bottom
    }

    pub fn substitute_one(&self, s: &Symbol, value: &Expr) -> Expr {
        let mut m = BTreeMap::new();
        m.insert(s.clone(), value.clone());
        self.substitute(&m)
    }

    /// Numeric value, with `lookup` supplying every free symbol.
    pub fn eval_with(&self, lookup: &dyn Fn(&Symbol) -> Option<f64>) -> Result<f64, EvalError> {
        let mut cache: HashMap<Var, f64> = HashMap::new();
        let n = eval_poly(&self.0.num, lookup, &mut cache)?;
        let mut d = 1.0;
        for (f, e) in &self.0.den {
            d *= eval_poly(f, lookup, &mut cache)?.powi(*e as i32);
        }
        if d == 0.0 || !d.is_finite() {
            return Err(EvalError::Pole);
        }
        Ok(n / d)
    }

    /// Splits `self = Σ coeffs[i] * unknowns[i] + rest`, or `None` if the
    /// expression is not affine in the unknowns.
    pub fn affine_in(&self, unknowns: &[Symbol]) -> Option<(Vec<Expr>, Expr)> {
        for (f, _) in &self.0.den {
            if unknowns.iter().any(|u| f.symbols().contains(u)) {
                return None;
            }
        }
        let vars: Vec<Var> = unknowns.iter().map(|u| Var::Sym(u.clone())).collect();
        let mut parts: Vec<Vec<(Monomial, Coef)>> = vec![Vec::new(); unknowns.len()];
        let mut rest = Vec::new();
        for (m, c) in self.0.num.terms() {
            for (v, _) in m.factors() {
                if let Var::Sqrt(r) = v {
                    if unknowns.iter().any(|u| r.poly().symbols().contains(u)) {
                        return None;
                    }
                }
            }
            let hits: Vec<(usize, u32)> = vars
                .iter()
                .enumerate()
                .filter_map(|(i, v)| {
                    let d = m.degree(v);
                    (d > 0).then_some((i, d))
                })
                .collect();
            match hits.as_slice() {
                [] => rest.push((m.clone(), c.clone())),
                [(i, 1)] => parts[*i].push((m.split(&vars[*i]).0, c.clone())),
                _ => return None,
            }
        }
        let den = self.0.den.clone();
        let coeffs = parts
            .into_iter()
            .map(|t| Expr::from_parts(Poly::from_terms(t), den.clone()))
            .collect();
        Some((coeffs, Expr::from_parts(Poly::from_terms(rest), den)))
    }

    /// Groups numerator terms by `key`, keeping the common denominator.
    pub fn split_numerator<K: Ord>(&self, key: impl Fn(&Monomial) -> K) -> BTreeMap<K, Expr> {
        let mut groups: BTreeMap<K, Vec<(Monomial, Coef)>> = BTreeMap::new();
        for (m, c) in self.0.num.terms() {
            groups.entry(key(m)).or_default().push((m.clone(), c.clone()));
        }
        groups
            .into_iter()
            .map(|(k, t)| (k, Expr::from_parts(Poly::from_terms(t), self.0.den.clone())))
            .collect()
    }

    /// Sum of many terms over one common denominator, canonicalized once.
    pub fn sum_all(items: &[Expr]) -> Expr {
        let items: Vec<&Expr> = items.iter().filter(|e| !e.is_zero()).collect();
        match items.len() {
            0 => return Expr::zero(),
            1 => return items[0].clone(),
            _ => {}
        }
        let mut common: BTreeMap<&Poly, u32> = BTreeMap::new();
        for e in &items {
            for (f, k) in &e.0.den {
                let slot = common.entry(f).or_default();
                *slot = (*slot).max(*k);
            }
        }
        let mut raw = Vec::new();
        for e in &items {
            let mut m = Poly::one();
            for (f, k) in &common {
                let have = e.0.den.iter().find(|(g, _)| g == *f).map_or(0, |(_, j)| *j);
                if *k > have {
                    m = m.mul(&f.pow(k - have));
                }
            }
            raw.extend(e.0.num.mul(&m).terms().iter().cloned());
        }
        let den: Vec<(Poly, u32)> = common.into_iter().map(|(f, k)| (f.clone(), k)).collect();
        let num = Poly::from_terms(raw);
        if den.is_empty() {
            return Expr::raw(num, den);
        }
        canonicalize(num, den)
    }

    /// Same expression with numerator content and sign normalized: the
    /// result differs from `self` by a nonzero rational factor.
    pub fn primitive(&self) -> Expr {
        if self.is_zero() {
            return self.clone();
        }
        let (_, p) = self.0.num.primitive();
        Expr::raw(p, self.0.den.clone())
    }

    /// `Some(c)` when `self = c * other` for a rational constant `c`.
    pub fn rational_multiple_of(&self, other: &Expr) -> Option<Coef> {
        if other.is_zero() {
            return self.is_zero().then(Coef::zero);
        }
        let q = self / other;
        q.as_rational()
    }
}

fn sqrt_poly(r: &Poly) -> Expr {
    if let Some(c) = r.as_constant() {
        return sqrt_rational(&c);
    }
    // pull the rational square part of the content out of the radical
    let (c, p) = r.primitive();
    let (outside, inside) = square_split(&c);
    let atom = Var::sqrt_of(p.scale(&inside));
    Expr::from_poly(Poly::from_var(atom).scale(&outside))
}

/// `c = outside^2 * inside` with `inside` an integer free of small square factors.
fn square_split(c: &Coef) -> (Coef, Coef) {
    // sqrt(n/d) = sqrt(n d) / d
    let nd = c.numer() * c.denom();
    let sign = if nd.is_negative() { -BigInt::one() } else { BigInt::one() };
    let mut rest = nd.abs();
    let mut out = BigInt::one();
    let mut p = BigInt::from(2);
    let limit = BigInt::from(10_000);
    while p <= limit && &p * &p <= rest {
        let sq = &p * &p;
        while (&rest % &sq).is_zero() {
            rest /= &sq;
            out *= &p;
        }
        p += 1;
    }
    if let Some(s) = exact_isqrt(&rest) {
        out *= s;
        rest = BigInt::one();
    }
    (Coef::new(out, c.denom().clone()), Coef::from_integer(sign * rest))
}

fn exact_isqrt(n: &BigInt) -> Option<BigInt> {
    if n.is_negative() {
        return None;
    }
    let s = n.sqrt();
    (&s * &s == *n).then_some(s)
}

fn sqrt_rational(c: &Coef) -> Expr {
    if c.is_zero() {
        return Expr::zero();
    }
    let (outside, inside) = square_split(c);
    if inside.is_one() {
        return Expr::from_rational(outside);
    }
    let atom = Var::sqrt_of(Poly::constant(inside));
    Expr::from_poly(Poly::from_var(atom).scale(&outside))
}

/// Breaks a square-root-free denominator factor into its monomial part and
/// primitive remainder; constants are moved into `num`.
fn split_factor(f: &Poly, num: &mut Poly, e: u32) -> Vec<(Poly, u32)> {
    let mut out = Vec::new();
    if let Some(c) = f.as_constant() {
        assert!(!c.is_zero(), "zero denominator factor");
        *num = num.scale(&c.recip().pow(e as i32));
        return out;
    }
    let m = f.monomial_content();
    for (v, k) in m.factors() {
        out.push((Poly::from_var(v.clone()), k * e));
    }
    let rest = f.div_monomial(&m);
    let (c, p) = rest.primitive();
    *num = num.scale(&c.recip().pow(e as i32));
    if !p.is_constant() {
        out.push((p, e));
    }
    out
}

fn single_var(f: &Poly) -> Option<Var> {
    match f.terms() {
        [(m, _)] if m.factors().len() == 1 && m.factors()[0].1 == 1 => Some(m.factors()[0].0.clone()),
        _ => None,
    }
}

/// Cancels common factors, merges repeated factors and sorts the list.
fn canonicalize(num: Poly, factors: Vec<(Poly, u32)>) -> Expr {
    let mut num = num;
    if num.is_zero() {
        return Expr::zero();
    }
    let mut work: Vec<(Poly, u32)> = factors;
    let mut out: Vec<(Poly, u32)> = Vec::new();
    while let Some((f, mut e)) = work.pop() {
        while e > 0 {
            if let Some(v) = single_var(&f) {
                let d = num.monomial_content().degree(&v);
                if d == 0 {
                    break;
                }
                let k = d.min(e);
                num = num.div_monomial(&Monomial::var(v, k));
                e -= k;
                continue;
            }
            if proven_coprime(&num, &f) {
                break;
            }
            if let Some(q) = num.div_exact(&f) {
                num = q;
                e -= 1;
                continue;
            }
            let g = gcd(&num, &f);
            if g.is_constant() {
                break;
            }
            let h = f.div_exact(&g).expect("gcd divides its argument");
            for part in [g, h] {
                let mut scale = Poly::one();
                work.extend(split_factor(&part, &mut scale, e));
                num = num.mul(&scale);
            }
            e = 0;
        }
        if e > 0 {
            if let Some(slot) = out.iter_mut().find(|(g, _)| *g == f) {
                slot.1 += e;
            } else {
                out.push((f, e));
            }
        }
    }
    out.sort();
    Expr::raw(num, out)
}

fn subst_poly(p: &Poly, map: &BTreeMap<Symbol, Expr>) -> Expr {
    let vars = p.vars();
    let mut values: HashMap<Var, Expr> = HashMap::new();
    for v in &vars {
        match v {
            Var::Sym(s) => {
                if let Some(e) = map.get(s) {
                    values.insert(v.clone(), e.clone());
                }
            }
            Var::Sqrt(r) => {
                if r.poly().symbols().iter().any(|s| map.contains_key(s)) {
                    let inner = subst_poly(r.poly(), map);
                    values.insert(v.clone(), inner.sqrt());
                }
            }
        }
    }
    if values.is_empty() {
        return Expr::from_poly(p.clone());
    }
    // bring every value over one common denominator D, then homogenize by
    // the total degree T in the substituted variables: Σ c Π n_v^e D^(T-|e|) / D^T
    let mut common: BTreeMap<&Poly, u32> = BTreeMap::new();
    for e in values.values() {
        for (f, k) in e.den_factors() {
            let slot = common.entry(f).or_default();
            *slot = (*slot).max(*k);
        }
    }
    let nums: HashMap<Var, Poly> = values
        .iter()
        .map(|(v, e)| {
            let mut n = e.numer().clone();
            for (f, k) in &common {
                let have = e.den_factors().iter().find(|(g, _)| g == *f).map_or(0, |(_, j)| *j);
                if *k > have {
                    n = n.mul(&f.pow(*k - have));
                }
            }
            (v.clone(), n)
        })
        .collect();
    let d_all = common.iter().fold(Poly::one(), |acc, (f, k)| acc.mul(&f.pow(*k)));
    let subst_degree = |m: &Monomial| -> u32 { m.factors().iter().filter(|(v, _)| nums.contains_key(v)).map(|(_, e)| *e).sum() };
    let total = p.terms().iter().map(|(m, _)| subst_degree(m)).max().unwrap_or(0);
    let mut npow: HashMap<(Var, u32), Poly> = HashMap::new();
    let mut dpow: HashMap<u32, Poly> = HashMap::new();
    let mut raw: Vec<(Monomial, Coef)> = Vec::new();
    for (m, c) in p.terms() {
        let mut keep = Monomial::one();
        let mut factor = Poly::one();
        for (v, e) in m.factors() {
            if let Some(n) = nums.get(v) {
                let np = npow.entry((v.clone(), *e)).or_insert_with(|| n.pow(*e));
                factor = factor.mul(np);
            } else {
                keep = keep.mul(&Monomial::var(v.clone(), *e));
            }
        }
        let k = total - subst_degree(m);
        if k > 0 {
            let dp = dpow.entry(k).or_insert_with(|| d_all.pow(k));
            factor = factor.mul(dp);
        }
        raw.extend(factor.mul_term(&keep, c).terms().iter().cloned());
    }
    let top = Poly::from_terms(raw);
    let den = common.into_iter().map(|(f, k)| (f.clone(), k * total)).collect();
    Expr::from_parts(top, den)
}

fn eval_poly(
    p: &Poly,
    lookup: &dyn Fn(&Symbol) -> Option<f64>,
    cache: &mut HashMap<Var, f64>,
) -> Result<f64, EvalError> {
    let mut f = |v: &Var| -> Result<f64, EvalError> {
        if let Some(x) = cache.get(v) {
            return Ok(*x);
        }
        let x = match v {
            Var::Sym(s) => lookup(s).ok_or_else(|| EvalError::MissingSymbol(s.to_string()))?,
            Var::Sqrt(r) => {
                let mut inner = HashMap::new();
                let val = eval_poly(r.poly(), lookup, &mut inner)?;
                if val < 0.0 {
                    return Err(EvalError::NegativeSqrt(val));
                }
                val.sqrt()
            }
        };
        cache.insert(v.clone(), x);
        Ok(x)
    };
    p.eval(&mut f)
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        if Arc::ptr_eq(&self.0, &other.0) {
            return true;
        }
        self.0.num == other.0.num && (self.0.den == other.0.den || self.denom() == other.denom())
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.num.hash(state);
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

fn needs_parens(p: &Poly) -> bool {
    match p.terms() {
        [(m, c)] => !(c.is_one() && m.factors().len() == 1),
        _ => true,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let num = &self.0.num;
        if self.0.den.is_empty() {
            return write!(f, "{num}");
        }
        if num.len() > 1 {
            write!(f, "({num})")?;
        } else {
            write!(f, "{num}")?;
        }
        let den = self.denom();
        if needs_parens(den) {
            write!(f, "/({den})")
        } else {
            write!(f, "/{den}")
        }
    }
}

impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl From<i64> for Expr {
    fn from(n: i64) -> Expr {
        Expr::from_int(n)
    }
}

impl From<Symbol> for Expr {
    fn from(s: Symbol) -> Expr {
        Expr::symbol(s)
    }
}

fn add_exprs(a: &Expr, b: &Expr, negate: bool) -> Expr {
    if b.is_zero() {
        return a.clone();
    }
    if a.is_zero() {
        return if negate { -b } else { b.clone() };
    }
    let bn = if negate { b.0.num.neg() } else { b.0.num.clone() };
    if a.0.den == b.0.den {
        let num = a.0.num.add(&bn);
        if a.0.den.is_empty() {
            return Expr::raw(num, Vec::new());
        }
        return canonicalize(num, a.0.den.clone());
    }
    // common denominator from the union of factor lists
    let mut common: BTreeMap<&Poly, (u32, u32)> = BTreeMap::new();
    for (f, e) in &a.0.den {
        common.entry(f).or_default().0 = *e;
    }
    for (f, e) in &b.0.den {
        common.entry(f).or_default().1 = *e;
    }
    let mut ma = Poly::one();
    let mut mb = Poly::one();
    let mut den = Vec::with_capacity(common.len());
    for (f, (ea, eb)) in common {
        let e = ea.max(eb);
        if e > ea {
            ma = ma.mul(&f.pow(e - ea));
        }
        if e > eb {
            mb = mb.mul(&f.pow(e - eb));
        }
        den.push((f.clone(), e));
    }
    let num = a.0.num.mul(&ma).add(&bn.mul(&mb));
    canonicalize(num, den)
}

fn mul_exprs(a: &Expr, b: &Expr) -> Expr {
    if a.is_zero() || b.is_zero() {
        return Expr::zero();
    }
    if a.is_one() {
        return b.clone();
    }
    if b.is_one() {
        return a.clone();
    }
    if let Some(c) = a.as_rational() {
        return Expr::raw(b.0.num.scale(&c), b.0.den.clone());
    }
    if let Some(c) = b.as_rational() {
        return Expr::raw(a.0.num.scale(&c), a.0.den.clone());
    }
    let num = a.0.num.mul(&b.0.num);
    let mut den = a.0.den.clone();
    for (f, e) in &b.0.den {
        if let Some(slot) = den.iter_mut().find(|(g, _)| g == f) {
            slot.1 += e;
        } else {
            den.push((f.clone(), *e));
        }
    }
    if den.is_empty() {
        return Expr::raw(num, den);
    }
    canonicalize(num, den)
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident, $body:expr) => {
        impl $trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(self, rhs)
            }
        }
        impl $trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                (&self).$method(&rhs)
            }
        }
        impl $trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                (&self).$method(rhs)
            }
        }
        impl $trait<Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                self.$method(&rhs)
            }
        }
    };
}

forward_binop!(Add, add, |a, b| add_exprs(a, b, false));
forward_binop!(Sub, sub, |a, b| add_exprs(a, b, true));
forward_binop!(Mul, mul, mul_exprs);
forward_binop!(Div, div, |a, b| {
    if let Some(c) = b.as_rational() {
        assert!(!c.is_zero(), "division by the zero expression");
        return Expr::raw(a.0.num.scale(&c.recip()), a.0.den.clone());
    }
    mul_exprs(a, &b.recip())
});

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::raw(self.0.num.neg(), self.0.den.clone())
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -&self
    }
}

impl std::iter::Sum for Expr {
    fn sum<I: Iterator<Item = Expr>>(iter: I) -> Expr {
        let items: Vec<Expr> = iter.collect();
        Expr::sum_all(&items)
    }
}

/// Integer factorial as an expression constant.
/// `dp/dv` including the chain rule through every root atom of `p`, nested
/// radicands included.
fn total_diff(p: &Poly, v: &Var) -> Expr {
    let mut d = Expr::from_poly(p.diff_var(v));
    for atom in p.sqrt_atoms() {
        let r = atom.radicand().unwrap();
        let dr = total_diff(r, v);
        if dr.is_zero() {
            continue;
        }
        // d sqrt(r) = r' sqrt(r) / (2 r)
        let top = p.diff_var(&atom).mul(&Poly::from_var(atom.clone()));
        d = d + Expr::from_parts(top.scale(&Coef::new(1.into(), 2.into())), vec![(r.clone(), 1)]) * dr;
    }
    d
}

pub fn factorial_ratio(top: u32, bottom: u32) -> Coef {
    let mut r = BigInt::one();
    for i in (bottom + 1)..=top {
        r *= i;
    }
    Coef::from_integer(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(i: usize) -> Expr {
        Expr::symbol(Symbol::q(i, 0))
    }

    fn g() -> Expr {
        Expr::param("g")
    }

    #[test]
    fn ring_identity_normalizes_to_zero() {
        let e = (q(1) + q(2)).pow(2) - q(1).pow(2) - Expr::from_int(2) * q(1) * q(2) - q(2).pow(2);
        assert!(e.is_zero());
    }

    #[test]
    fn quotients_cancel() {
        let a = (q(0) + q(1)) * (q(0) - q(2));
        let b = (q(0) + q(1)) * q(2);
        let r = &a / &b;
        assert_eq!(r.to_string(), "(q0 - q2)/q2");
        assert_eq!(&r * &(q(2) / (q(0) - q(2))), Expr::one());
    }

    #[test]
    fn sums_of_fractions_cancel_fully() {
        let x = q(0);
        let e = Expr::one() / (&x - Expr::one()) - Expr::one() / (&x + Expr::one());
        let expected = Expr::from_int(2) / (&x * &x - Expr::one());
        assert_eq!(e, expected);
    }

    #[test]
    fn sqrt_folds_perfect_squares() {
        assert_eq!(Expr::from_int(9).sqrt(), Expr::from_int(3));
        assert_eq!(Expr::ratio(1, 4).sqrt(), Expr::ratio(1, 2));
        let s = Expr::from_int(8).sqrt();
        assert_eq!(s.to_string(), "2*sqrt(2)");
        assert_eq!(&s * &s, Expr::from_int(8));
    }

    #[test]
    fn sqrt_atoms_rationalize() {
        let s = (q(1) * q(1) + Expr::one()).sqrt();
        let r = Expr::one() / &s;
        assert_eq!(&r * &s, Expr::one());
        let t = Expr::one() / (Expr::one() + &s);
        assert_eq!(&t * (Expr::one() + &s), Expr::one());
    }

    #[test]
    fn derivative_of_sqrt() {
        let s = (q(1) * q(1) + Expr::one()).sqrt();
        let d = s.diff(&Symbol::q(1, 0));
        assert_eq!(d, q(1) / &s);
    }

    #[test]
    fn derivative_of_quotient() {
        let e = g() * q(1) / (q(0) * q(0) + q(1));
        let d = e.diff(&Symbol::q(0, 0));
        let expected = -Expr::from_int(2) * g() * q(1) * q(0) / (q(0) * q(0) + q(1)).pow(2);
        assert_eq!(d, expected);
    }

    #[test]
    fn substitution_example() {
        let p1 = Expr::symbol(Symbol::p(1, 0));
        let e = &p1 + g() * q(2);
        let r = e.substitute_one(&Symbol::p(1, 0), &(-g() * q(2)));
        assert!(r.is_zero());
    }

    #[test]
    fn substitution_into_radicand_and_denominator() {
        let e = (q(1) * q(1) + Expr::one()).sqrt() / q(1);
        let r = e.substitute_one(&Symbol::q(1, 0), &(q(2) * q(2)));
        let expected = (q(2).pow(4) + Expr::one()).sqrt() / (q(2) * q(2));
        assert_eq!(r, expected);
    }

    #[test]
    fn affine_split() {
        let f = Symbol::unknown(crate::symbolic::symbol::UnknownKind::HighF, 3, 0);
        let e = -(Expr::symbol(f.clone()) * g()) - q(2) - q(0);
        let (c, rest) = e.affine_in(std::slice::from_ref(&f)).unwrap();
        assert_eq!(c[0], -g());
        assert_eq!(rest, -q(0) - q(2));
    }

    #[test]
    fn eval_reports_missing_symbols() {
        let e = q(1) + g() * q(3);
        let v = e.eval_with(&|s| match s.to_string().as_str() {
            "q1" => Some(1.0),
            "q3" => Some(2.0),
            "g" => Some(3.0),
            _ => None,
        });
        assert_eq!(v.unwrap(), 7.0);
        assert!(matches!(q(5).eval_with(&|_| None), Err(EvalError::MissingSymbol(_))));
    }
}
