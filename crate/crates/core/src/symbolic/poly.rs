//! Sparse multivariate polynomials over the rationals.
//!
//! Terms are kept sorted in descending lexicographic order of their
//! monomials, with no zero coefficients. Square-root atoms are ordinary
//! variables here; the rewrite `sqrt(R)^2 -> R` is applied by [`Poly::mul`].

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use smallvec::SmallVec;

use super::symbol::Symbol;

pub type Coef = BigRational;

/// The radicand of a square-root atom, with a cached hash used for ordering.
#[derive(Debug)]
pub struct Radicand {
    key: u64,
    poly: Poly,
}

impl Radicand {
    pub fn poly(&self) -> &Poly {
        &self.poly
    }
}

#[derive(Clone, Debug)]
pub enum Var {
    Sym(Symbol),
    Sqrt(Arc<Radicand>),
}

impl Var {
    pub fn sqrt_of(poly: Poly) -> Var {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        poly.hash(&mut h);
        Var::Sqrt(Arc::new(Radicand { key: h.finish(), poly }))
    }

    fn rank(&self) -> u8 {
        match self {
            Var::Sym(s) => s.rank(),
            Var::Sqrt(_) => 3,
        }
    }

    pub fn as_symbol(&self) -> Option<&Symbol> {
        match self {
            Var::Sym(s) => Some(s),
            Var::Sqrt(_) => None,
        }
    }

    pub fn radicand(&self) -> Option<&Poly> {
        match self {
            Var::Sqrt(r) => Some(&r.poly),
            Var::Sym(_) => None,
        }
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Var::Sym(a), Var::Sym(b)) => a == b,
            (Var::Sqrt(a), Var::Sqrt(b)) => Arc::ptr_eq(a, b) || (a.key == b.key && a.poly == b.poly),
            _ => false,
        }
    }
}

impl Eq for Var {}

impl Hash for Var {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Var::Sym(s) => s.hash(state),
            Var::Sqrt(r) => r.key.hash(state),
        }
    }
}

impl Ord for Var {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.rank().cmp(&other.rank()) {
            Ordering::Equal => {}
            o => return o,
        }
        match (self, other) {
            (Var::Sym(a), Var::Sym(b)) => a.cmp(b),
            (Var::Sqrt(a), Var::Sqrt(b)) => {
                if Arc::ptr_eq(a, b) {
                    Ordering::Equal
                } else {
                    a.key.cmp(&b.key).then_with(|| a.poly.cmp(&b.poly))
                }
            }
            _ => unreachable!("ranks differ between symbols and atoms"),
        }
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Power product, sorted by variable with the most significant first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Monomial(SmallVec<[(Var, u32); 4]>);

impl Monomial {
    pub fn one() -> Monomial {
        Monomial(SmallVec::new())
    }

    pub fn var(v: Var, e: u32) -> Monomial {
        if e == 0 {
            return Monomial::one();
        }
        let mut s = SmallVec::new();
        s.push((v, e));
        Monomial(s)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn factors(&self) -> &[(Var, u32)] {
        &self.0
    }

    pub fn degree(&self, v: &Var) -> u32 {
        self.0.iter().find(|(w, _)| w == v).map_or(0, |(_, e)| *e)
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        if self.is_one() {
            return other.clone();
        }
        if other.is_one() {
            return self.clone();
        }
        let (a, b) = (&self.0, &other.0);
        let mut out = SmallVec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i].clone());
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j].clone());
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0.clone(), a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend(a[i..].iter().cloned());
        out.extend(b[j..].iter().cloned());
        Monomial(out)
    }

    pub fn divides(&self, other: &Monomial) -> bool {
        let mut j = 0;
        for (v, e) in &self.0 {
            loop {
                if j >= other.0.len() {
                    return false;
                }
                match other.0[j].0.cmp(v) {
                    Ordering::Less => j += 1,
                    Ordering::Equal => break,
                    Ordering::Greater => return false,
                }
            }
            if other.0[j].1 < *e {
                return false;
            }
            j += 1;
        }
        true
    }

    /// `other / self`, assuming `self` divides `other`.
    pub fn quotient_of(&self, other: &Monomial) -> Monomial {
        let mut out = SmallVec::with_capacity(other.0.len());
        for (v, e) in &other.0 {
            let d = self.degree(v);
            if *e > d {
                out.push((v.clone(), e - d));
            }
        }
        Monomial(out)
    }

    pub fn gcd(&self, other: &Monomial) -> Monomial {
        let mut out = SmallVec::new();
        for (v, e) in &self.0 {
            let d = other.degree(v);
            if d > 0 {
                out.push((v.clone(), (*e).min(d)));
            }
        }
        Monomial(out)
    }

    /// Splits off the power of `v`.
    pub fn split(&self, v: &Var) -> (Monomial, u32) {
        let mut e = 0;
        let mut out = SmallVec::with_capacity(self.0.len());
        for (w, k) in &self.0 {
            if w == v {
                e = *k;
            } else {
                out.push((w.clone(), *k));
            }
        }
        (Monomial(out), e)
    }

    pub fn has_sqrt(&self) -> bool {
        self.0.iter().any(|(v, _)| matches!(v, Var::Sqrt(_)))
    }

    /// Exponents of plain symbols, ignoring square-root atoms.
    pub fn symbol_powers(&self) -> impl Iterator<Item = (&Symbol, u32)> {
        self.0.iter().filter_map(|(v, e)| v.as_symbol().map(|s| (s, *e)))
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (&self.0, &other.0);
        let mut i = 0;
        loop {
            match (a.get(i), b.get(i)) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some((va, ea)), Some((vb, eb))) => match va.cmp(vb) {
                    Ordering::Equal => match ea.cmp(eb) {
                        Ordering::Equal => i += 1,
                        o => return o,
                    },
                    Ordering::Less => return Ordering::Greater,
                    Ordering::Greater => return Ordering::Less,
                },
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Poly {
    terms: Vec<(Monomial, Coef)>,
}

impl Ord for Poly {
    fn cmp(&self, other: &Self) -> Ordering {
        for (x, y) in self.terms.iter().zip(&other.terms) {
            match x.0.cmp(&y.0).then_with(|| x.1.cmp(&y.1)) {
                Ordering::Equal => {}
                o => return o,
            }
        }
        self.terms.len().cmp(&other.terms.len())
    }
}

impl PartialOrd for Poly {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn sort_and_combine(mut raw: Vec<(Monomial, Coef)>) -> Vec<(Monomial, Coef)> {
    raw.sort_by(|x, y| y.0.cmp(&x.0));
    let mut out: Vec<(Monomial, Coef)> = Vec::with_capacity(raw.len());
    for (m, c) in raw {
        match out.last_mut() {
            Some(last) if last.0 == m => last.1 += c,
            _ => {
                if let Some(last) = out.last() {
                    if last.1.is_zero() {
                        out.pop();
                    }
                }
                out.push((m, c));
            }
        }
    }
    if out.last().is_some_and(|t| t.1.is_zero()) {
        out.pop();
    }
    out
}

struct HeapItem {
    mono: Monomial,
    i: usize,
    j: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.mono == other.mono
    }
}
impl Eq for HeapItem {}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.mono.cmp(&other.mono)
    }
}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Poly {
    pub fn zero() -> Poly {
        Poly { terms: Vec::new() }
    }

    pub fn one() -> Poly {
        Poly::constant(Coef::one())
    }

    pub fn constant(c: Coef) -> Poly {
        if c.is_zero() {
            Poly::zero()
        } else {
            Poly { terms: vec![(Monomial::one(), c)] }
        }
    }

    pub fn from_int(n: i64) -> Poly {
        Poly::constant(Coef::from_integer(BigInt::from(n)))
    }

    pub fn from_var(v: Var) -> Poly {
        Poly { terms: vec![(Monomial::var(v, 1), Coef::one())] }
    }

    pub fn symbol(s: Symbol) -> Poly {
        Poly::from_var(Var::Sym(s))
    }

    pub fn term(m: Monomial, c: Coef) -> Poly {
        if c.is_zero() {
            Poly::zero()
        } else {
            Poly { terms: vec![(m, c)] }
        }
    }

    /// Builds a polynomial from arbitrary terms (any order, duplicates allowed).
    pub fn from_terms(raw: Vec<(Monomial, Coef)>) -> Poly {
        let mut p = Poly { terms: sort_and_combine(raw) };
        if p.needs_sqrt_reduction() {
            p = p.reduce_sqrt();
        }
        p
    }

    pub fn terms(&self) -> &[(Monomial, Coef)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1 && self.terms[0].0.is_one() && self.terms[0].1.is_one()
    }

    pub fn as_constant(&self) -> Option<Coef> {
        match self.terms.as_slice() {
            [] => Some(Coef::zero()),
            [(m, c)] if m.is_one() => Some(c.clone()),
            _ => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.as_constant().is_some()
    }

    pub fn lead(&self) -> Option<&(Monomial, Coef)> {
        self.terms.first()
    }

    pub fn neg(&self) -> Poly {
        Poly { terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect() }
    }

    pub fn scale(&self, k: &Coef) -> Poly {
        if k.is_zero() {
            return Poly::zero();
        }
        Poly { terms: self.terms.iter().map(|(m, c)| (m.clone(), c * k)).collect() }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        self.merge(other, false)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.merge(other, true)
    }

    fn merge(&self, other: &Poly, negate: bool) -> Poly {
        let (a, b) = (&self.terms, &other.terms);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        let sgn = |c: &Coef| if negate { -c } else { c.clone() };
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Greater => {
                    out.push(a[i].clone());
                    i += 1;
                }
                Ordering::Less => {
                    out.push((b[j].0.clone(), sgn(&b[j].1)));
                    j += 1;
                }
                Ordering::Equal => {
                    let c = if negate { &a[i].1 - &b[j].1 } else { &a[i].1 + &b[j].1 };
                    if !c.is_zero() {
                        out.push((a[i].0.clone(), c));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend(a[i..].iter().cloned());
        out.extend(b[j..].iter().map(|(m, c)| (m.clone(), sgn(c))));
        Poly { terms: out }
    }

    pub fn mul_term(&self, m: &Monomial, k: &Coef) -> Poly {
        if k.is_zero() {
            return Poly::zero();
        }
        let p = Poly { terms: self.terms.iter().map(|(n, c)| (n.mul(m), c * k)).collect() };
        if p.needs_sqrt_reduction() {
            p.reduce_sqrt()
        } else {
            p
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let (a, b) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        if a.len() == 1 {
            return b.mul_term(&a.terms[0].0, &a.terms[0].1);
        }
        let p = if a.len() * b.len() <= 4096 {
            let mut raw = Vec::with_capacity(a.len() * b.len());
            for (ma, ca) in &a.terms {
                for (mb, cb) in &b.terms {
                    raw.push((ma.mul(mb), ca * cb));
                }
            }
            Poly { terms: sort_and_combine(raw) }
        } else {
            a.heap_mul(b)
        };
        if p.needs_sqrt_reduction() {
            p.reduce_sqrt()
        } else {
            p
        }
    }

    /// Johnson's heap multiplication: memory stays linear in the inputs.
    fn heap_mul(&self, other: &Poly) -> Poly {
        let (a, b) = (&self.terms, &other.terms);
        let mut heap = BinaryHeap::with_capacity(a.len());
        for (i, (ma, _)) in a.iter().enumerate() {
            heap.push(HeapItem { mono: ma.mul(&b[0].0), i, j: 0 });
        }
        let mut out: Vec<(Monomial, Coef)> = Vec::new();
        while let Some(top) = heap.pop() {
            let mono = top.mono;
            let mut acc = &a[top.i].1 * &b[top.j].1;
            let mut pending = vec![(top.i, top.j)];
            while heap.peek().is_some_and(|h| h.mono == mono) {
                let h = heap.pop().unwrap();
                acc += &a[h.i].1 * &b[h.j].1;
                pending.push((h.i, h.j));
            }
            for (i, j) in pending {
                if j + 1 < b.len() {
                    heap.push(HeapItem { mono: a[i].0.mul(&b[j + 1].0), i, j: j + 1 });
                }
            }
            if !acc.is_zero() {
                out.push((mono, acc));
            }
        }
        Poly { terms: out }
    }

    pub fn pow(&self, e: u32) -> Poly {
        let mut result = Poly::one();
        let mut base = self.clone();
        let mut e = e;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    fn needs_sqrt_reduction(&self) -> bool {
        self.terms
            .iter()
            .any(|(m, _)| m.0.iter().any(|(v, e)| *e >= 2 && matches!(v, Var::Sqrt(_))))
    }

    /// Rewrites every `sqrt(R)^e` with `e ≥ 2` as `R^(e/2) sqrt(R)^(e%2)`.
    pub fn reduce_sqrt(&self) -> Poly {
        let mut acc: Vec<(Monomial, Coef)> = Vec::new();
        for (m, c) in &self.terms {
            let mut plain = SmallVec::new();
            let mut factor = Poly::one();
            let mut reduced = false;
            for (v, e) in &m.0 {
                match v {
                    Var::Sqrt(r) if *e >= 2 => {
                        reduced = true;
                        factor = factor.mul(&r.poly.pow(e / 2));
                        if e % 2 == 1 {
                            plain.push((v.clone(), 1));
                        }
                    }
                    _ => plain.push((v.clone(), *e)),
                }
            }
            if reduced {
                acc.extend(factor.mul_term(&Monomial(plain), c).terms);
            } else {
                acc.push((m.clone(), c.clone()));
            }
        }
        Poly::from_terms(acc)
    }

    pub fn degree(&self, v: &Var) -> u32 {
        self.terms.iter().map(|(m, _)| m.degree(v)).max().unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.iter().map(|(m, _)| m.total_degree()).max().unwrap_or(0)
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut s = BTreeSet::new();
        for (m, _) in &self.terms {
            for (v, _) in &m.0 {
                s.insert(v.clone());
            }
        }
        s
    }

    /// Plain symbols, including those inside square-root radicands.
    pub fn symbols(&self) -> BTreeSet<Symbol> {
        let mut s = BTreeSet::new();
        for v in self.vars() {
            match v {
                Var::Sym(sym) => {
                    s.insert(sym);
                }
                Var::Sqrt(r) => s.extend(r.poly.symbols()),
            }
        }
        s
    }

    pub fn has_sqrt(&self) -> bool {
        self.terms.iter().any(|(m, _)| m.has_sqrt())
    }

    pub fn sqrt_atoms(&self) -> BTreeSet<Var> {
        self.vars().into_iter().filter(|v| matches!(v, Var::Sqrt(_))).collect()
    }

    /// Coefficients with respect to `v`: `self = Σ out[e] v^e`.
    pub fn coeffs_in(&self, v: &Var) -> Vec<Poly> {
        let d = self.degree(v) as usize;
        let mut raw: Vec<Vec<(Monomial, Coef)>> = vec![Vec::new(); d + 1];
        for (m, c) in &self.terms {
            let (rest, e) = m.split(v);
            raw[e as usize].push((rest, c.clone()));
        }
        // removing one variable keeps the relative order of the remaining terms
        raw.into_iter().map(|terms| Poly { terms }).collect()
    }

    pub fn from_coeffs_in(v: &Var, coeffs: &[Poly]) -> Poly {
        let mut raw = Vec::new();
        for (e, c) in coeffs.iter().enumerate() {
            let vm = Monomial::var(v.clone(), e as u32);
            for (m, k) in &c.terms {
                raw.push((m.mul(&vm), k.clone()));
            }
        }
        Poly { terms: sort_and_combine(raw) }
    }

    /// Formal partial derivative treating every variable as independent.
    pub fn diff_var(&self, v: &Var) -> Poly {
        let mut raw = Vec::new();
        for (m, c) in &self.terms {
            let e = m.degree(v);
            if e == 0 {
                continue;
            }
            let mut f = m.0.clone();
            let idx = f.iter().position(|(w, _)| w == v).unwrap();
            if e == 1 {
                f.remove(idx);
            } else {
                f[idx].1 = e - 1;
            }
            raw.push((Monomial(f), c * Coef::from_integer(BigInt::from(e))));
        }
        Poly { terms: sort_and_combine(raw) }
    }

    /// Positive rational `c` with `self / c` having coprime integer coefficients.
    pub fn content(&self) -> Coef {
        let mut num = BigInt::zero();
        let mut den = BigInt::one();
        for (_, c) in &self.terms {
            num = num.gcd(c.numer());
            den = den.lcm(c.denom());
        }
        if num.is_zero() {
            return Coef::one();
        }
        Coef::new(num, den)
    }

    /// Splits `self = c * p` with `p` integer-primitive and positive leading coefficient.
    pub fn primitive(&self) -> (Coef, Poly) {
        if self.is_zero() {
            return (Coef::one(), Poly::zero());
        }
        let mut c = self.content();
        if self.terms[0].1.is_negative() {
            c = -c;
        }
        if c.is_one() {
            return (c, self.clone());
        }
        let inv = c.recip();
        (c, self.scale(&inv))
    }

    pub fn monomial_content(&self) -> Monomial {
        let mut it = self.terms.iter();
        let Some(first) = it.next() else { return Monomial::one() };
        let mut g = first.0.clone();
        for (m, _) in it {
            if g.is_one() {
                break;
            }
            g = g.gcd(m);
        }
        g
    }

    pub fn div_monomial(&self, m: &Monomial) -> Poly {
        Poly { terms: self.terms.iter().map(|(n, c)| (m.quotient_of(n), c.clone())).collect() }
    }

    /// Exact quotient `self / d`, or `None` when `d` does not divide `self`.
    pub fn div_exact(&self, d: &Poly) -> Option<Poly> {
        if d.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(Poly::zero());
        }
        if let Some(c) = d.as_constant() {
            return Some(self.scale(&c.recip()));
        }
        if d.len() == 1 {
            let (dm, dc) = &d.terms[0];
            if !self.terms.iter().all(|(m, _)| dm.divides(m)) {
                return None;
            }
            let inv = dc.recip();
            return Some(Poly {
                terms: self.terms.iter().map(|(m, c)| (dm.quotient_of(m), c * &inv)).collect(),
            });
        }
        for v in d.vars() {
            if d.degree(&v) > self.degree(&v) {
                return None;
            }
        }
        if self.len() < d.len() {
            return None;
        }
        // the lowest terms must divide as well
        if !d.terms.last().unwrap().0.divides(&self.terms.last().unwrap().0) {
            return None;
        }
        self.heap_div(d)
    }

    /// Johnson's heap division, stopping at the first non-divisible term.
    fn heap_div(&self, d: &Poly) -> Option<Poly> {
        let a = &self.terms;
        let b = &d.terms;
        let (lm, lc) = (&b[0].0, &b[0].1);
        let inv = lc.recip();
        let mut q: Vec<(Monomial, Coef)> = Vec::new();
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::new();
        let mut ai = 0;
        loop {
            let next_heap = heap.peek().map(|h| h.mono.clone());
            let mono = match (a.get(ai), next_heap) {
                (None, None) => break,
                (Some((m, _)), None) => m.clone(),
                (None, Some(h)) => h,
                (Some((m, _)), Some(h)) => {
                    if *m >= h {
                        m.clone()
                    } else {
                        h
                    }
                }
            };
            let mut acc = Coef::zero();
            if ai < a.len() && a[ai].0 == mono {
                acc += &a[ai].1;
                ai += 1;
            }
            let mut pending = Vec::new();
            while heap.peek().is_some_and(|h| h.mono == mono) {
                let h = heap.pop().unwrap();
                acc -= &q[h.i].1 * &b[h.j].1;
                pending.push((h.i, h.j));
            }
            for (i, j) in pending {
                if j + 1 < b.len() {
                    heap.push(HeapItem { mono: q[i].0.mul(&b[j + 1].0), i, j: j + 1 });
                }
            }
            if acc.is_zero() {
                continue;
            }
            if !lm.divides(&mono) {
                return None;
            }
            let qm = lm.quotient_of(&mono);
            let qc = acc * &inv;
            let i = q.len();
            q.push((qm, qc));
            if b.len() > 1 {
                heap.push(HeapItem { mono: q[i].0.mul(&b[1].0), i, j: 1 });
            }
        }
        Some(Poly { terms: q })
    }

    /// Evaluates with `lookup` supplying plain symbols; radicands are evaluated recursively.
    pub fn eval<E>(&self, lookup: &mut dyn FnMut(&Var) -> Result<f64, E>) -> Result<f64, E> {
        let mut total = 0.0;
        for (m, c) in &self.terms {
            let mut t = c.to_f64().unwrap_or(f64::NAN);
            for (v, e) in &m.0 {
                t *= lookup(v)?.powi(*e as i32);
            }
            total += t;
        }
        Ok(total)
    }

    /// Substitutes polynomials for variables, expanding fully.
    pub fn substitute_vars(&self, map: &dyn Fn(&Var) -> Option<Poly>) -> Poly {
        let mut cache: std::collections::HashMap<(Var, u32), Poly> = Default::default();
        let mut raw: Vec<(Monomial, Coef)> = Vec::new();
        for (m, c) in &self.terms {
            let mut keep = SmallVec::new();
            let mut factor: Option<Poly> = None;
            for (v, e) in &m.0 {
                let key = (v.clone(), *e);
                let power = if let Some(p) = cache.get(&key) {
                    Some(p.clone())
                } else if let Some(base) = map(v) {
                    let p = base.pow(*e);
                    cache.insert(key, p.clone());
                    Some(p)
                } else {
                    None
                };
                match power {
                    Some(p) => factor = Some(match factor { Some(f) => f.mul(&p), None => p }),
                    None => keep.push((v.clone(), *e)),
                }
            }
            match factor {
                None => raw.push((Monomial(keep), c.clone())),
                Some(f) => raw.extend(f.mul_term(&Monomial(keep), c).terms),
            }
        }
        Poly::from_terms(raw)
    }
}

fn fmt_coef(c: &Coef) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Sym(s) => write!(f, "{s}"),
            Var::Sqrt(r) => write!(f, "sqrt({})", r.poly),
        }
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params = self.0.iter().filter(|(v, _)| matches!(v, Var::Sym(Symbol::Param(_))));
        let rest = self.0.iter().filter(|(v, _)| !matches!(v, Var::Sym(Symbol::Param(_))));
        let mut first = true;
        for (v, e) in params.chain(rest) {
            if !first {
                f.write_str("*")?;
            }
            first = false;
            if *e == 1 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{v}^{e}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (idx, (m, c)) in self.terms.iter().enumerate() {
            let neg = c.is_negative();
            match (idx, neg) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            let a = c.abs();
            if m.is_one() {
                f.write_str(&fmt_coef(&a))?;
            } else if a.is_one() {
                write!(f, "{m}")?;
            } else {
                write!(f, "{}*{m}", fmt_coef(&a))?;
            }
        }
        Ok(())
    }
}
