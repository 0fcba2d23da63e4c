//! Multivariate polynomial gcd.
//!
//! A cheap modular test proves coprimality in the common case; otherwise the
//! gcd is computed recursively with primitive pseudo-remainder sequences.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive};
use smallvec::SmallVec;

use super::poly::{Coef, Monomial, Poly, Var};

const P: u64 = (1 << 61) - 1;

fn mulmod(a: u64, b: u64) -> u64 {
    let z = a as u128 * b as u128;
    let lo = (z as u64) & P;
    let hi = (z >> 61) as u64;
    let r = lo + hi;
    if r >= P {
        r - P
    } else {
        r
    }
}

fn addmod(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= P {
        s - P
    } else {
        s
    }
}

fn submod(a: u64, b: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + P - b
    }
}

fn powmod(mut a: u64, mut e: u64) -> u64 {
    let mut r = 1;
    while e > 0 {
        if e & 1 == 1 {
            r = mulmod(r, a);
        }
        a = mulmod(a, a);
        e >>= 1;
    }
    r
}

fn invmod(a: u64) -> u64 {
    powmod(a, P - 2)
}

fn bigmod(n: &BigInt) -> u64 {
    if let Some(v) = n.to_i64() {
        let r = v.rem_euclid(P as i64);
        return r as u64;
    }
    let m = BigInt::from(P);
    let r = ((n % &m) + &m) % &m;
    r.to_u64().unwrap()
}

fn coef_mod(c: &Coef) -> Option<u64> {
    let n = bigmod(c.numer());
    if c.denom().is_one() {
        return Some(n);
    }
    let d = bigmod(c.denom());
    if d == 0 {
        return None;
    }
    Some(mulmod(n, invmod(d)))
}

/// Deterministic value stream for evaluation points.
struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        // avoid zero so every value is invertible
        1 + (z ^ (z >> 31)) % (P - 1)
    }
}

/// A polynomial evaluated at a random point, keeping per-term values and
/// the exponents of the variables whose univariate images are wanted.
struct ModImage {
    /// value of each full term, and its exponent in each tracked variable
    terms: Vec<(u64, SmallVec<[(u16, u16); 4]>)>,
    degs: Vec<usize>,
}

impl ModImage {
    fn new(p: &Poly, index: &BTreeMap<Var, usize>, tracked: &BTreeMap<Var, u16>, vals: &[Vec<u64>]) -> Option<ModImage> {
        let mut terms = Vec::with_capacity(p.len());
        let mut degs = vec![0usize; tracked.len()];
        for (m, c) in p.terms() {
            let mut t = coef_mod(c)?;
            let mut ex = SmallVec::new();
            for (v, k) in m.factors() {
                let i = index[v];
                t = mulmod(t, vals[i][*k as usize]);
                if let Some(&x) = tracked.get(v) {
                    ex.push((x, *k as u16));
                    degs[x as usize] = degs[x as usize].max(*k as usize);
                }
            }
            terms.push((t, ex));
        }
        Some(ModImage { terms, degs })
    }

    /// Univariate image in tracked variable `x` with value `xv` divided out.
    fn image(&self, x: u16, inv_pows: &[u64]) -> Vec<u64> {
        let mut out = vec![0u64; self.degs[x as usize] + 1];
        for (t, ex) in &self.terms {
            let e = ex.iter().find(|(y, _)| *y == x).map_or(0, |(_, k)| *k as usize);
            let v = if e == 0 { *t } else { mulmod(*t, inv_pows[e]) };
            out[e] = addmod(out[e], v);
        }
        out
    }
}

fn trim(v: &mut Vec<u64>) {
    while v.len() > 1 && *v.last().unwrap() == 0 {
        v.pop();
    }
}

fn uni_gcd_degree(mut a: Vec<u64>, mut b: Vec<u64>) -> usize {
    trim(&mut a);
    trim(&mut b);
    loop {
        if b.len() == 1 && b[0] == 0 {
            return a.len() - 1;
        }
        if a.len() < b.len() {
            std::mem::swap(&mut a, &mut b);
            continue;
        }
        let inv = invmod(*b.last().unwrap());
        while a.len() >= b.len() {
            let lead = *a.last().unwrap();
            if lead != 0 {
                let f = mulmod(lead, inv);
                let shift = a.len() - b.len();
                for (i, bi) in b.iter().enumerate() {
                    a[shift + i] = submod(a[shift + i], mulmod(f, *bi));
                }
            }
            a.pop();
            if a.is_empty() {
                a.push(0);
                break;
            }
        }
        trim(&mut a);
        std::mem::swap(&mut a, &mut b);
    }
}

/// `true` when `a` and `b` are proven coprime; `false` means "not proven".
pub fn proven_coprime(a: &Poly, b: &Poly) -> bool {
    if a.is_zero() || b.is_zero() {
        return false;
    }
    if a.is_constant() || b.is_constant() {
        return true;
    }
    let va = a.vars();
    let vb = b.vars();
    let common: Vec<Var> = va.intersection(&vb).cloned().collect();
    if common.is_empty() {
        return true;
    }
    let all: Vec<Var> = va.union(&vb).cloned().collect();
    let index: BTreeMap<Var, usize> = all.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
    let tracked: BTreeMap<Var, u16> = common.iter().cloned().enumerate().map(|(i, v)| (v, i as u16)).collect();
    let mut rng = SplitMix(0x5EED_1234_ABCD);
    let mut vals = Vec::with_capacity(all.len());
    for v in &all {
        let d = a.degree(v).max(b.degree(v)) as usize;
        let x = rng.next();
        let mut pw = Vec::with_capacity(d + 1);
        let mut acc = 1;
        for _ in 0..=d {
            pw.push(acc);
            acc = mulmod(acc, x);
        }
        vals.push(pw);
    }
    let (Some(ia), Some(ib)) = (ModImage::new(a, &index, &tracked, &vals), ModImage::new(b, &index, &tracked, &vals))
    else {
        return false;
    };
    for (x, &xi) in &tracked {
        let i = index[x];
        let d = vals[i].len() - 1;
        let inv = invmod(vals[i][1]);
        let mut inv_pows = Vec::with_capacity(d + 1);
        let mut acc = 1;
        for _ in 0..=d {
            inv_pows.push(acc);
            acc = mulmod(acc, inv);
        }
        let ua = ia.image(xi, &inv_pows);
        let ub = ib.image(xi, &inv_pows);
        if ua.last() == Some(&0) || ub.last() == Some(&0) {
            return false;
        }
        if uni_gcd_degree(ua, ub) > 0 {
            return false;
        }
    }
    true
}

/// Normalized gcd: integer-primitive with positive leading coefficient.
pub fn gcd(a: &Poly, b: &Poly) -> Poly {
    if a.is_zero() {
        return b.primitive().1;
    }
    if b.is_zero() {
        return a.primitive().1;
    }
    if a.is_constant() || b.is_constant() {
        return Poly::one();
    }
    let ma = a.monomial_content();
    let mb = b.monomial_content();
    let mg = Poly::term(ma.gcd(&mb), Coef::one());
    let a1 = a.div_monomial(&ma).primitive().1;
    let b1 = b.div_monomial(&mb).primitive().1;
    mg.mul(&gcd_core(&a1, &b1))
}

fn gcd_core(a: &Poly, b: &Poly) -> Poly {
    if a.is_constant() || b.is_constant() {
        return Poly::one();
    }
    if a == b {
        return a.primitive().1;
    }
    let va = a.vars();
    let vb = b.vars();
    // a variable present in only one input cannot occur in the gcd
    if let Some(y) = va.difference(&vb).next() {
        let mut list = a.coeffs_in(y);
        list.push(b.clone());
        return gcd_many(list);
    }
    if let Some(y) = vb.difference(&va).next() {
        let mut list = b.coeffs_in(y);
        list.push(a.clone());
        return gcd_many(list);
    }
    if proven_coprime(a, b) {
        return Poly::one();
    }
    if a.div_exact(b).is_some() {
        return b.primitive().1;
    }
    if b.div_exact(a).is_some() {
        return a.primitive().1;
    }
    let x = va
        .iter()
        .min_by_key(|v| (a.degree(v).max(b.degree(v)), a.degree(v) + b.degree(v)))
        .unwrap()
        .clone();
    let ca = gcd_many(a.coeffs_in(&x));
    let cb = gcd_many(b.coeffs_in(&x));
    let c = gcd(&ca, &cb);
    let mut pa = a.div_exact(&ca).unwrap().primitive().1;
    let mut pb = b.div_exact(&cb).unwrap().primitive().1;
    if pa.degree(&x) < pb.degree(&x) {
        std::mem::swap(&mut pa, &mut pb);
    }
    let g = loop {
        let r = prem(&pa, &pb, &x);
        if r.is_zero() {
            break pb;
        }
        if r.degree(&x) == 0 {
            break Poly::one();
        }
        let cr = gcd_many(r.coeffs_in(&x));
        pa = pb;
        pb = r.div_exact(&cr).unwrap().primitive().1;
    };
    c.mul(&g).primitive().1
}

/// Gcd of a list, smallest inputs first, stopping early at 1.
pub fn gcd_many(mut list: Vec<Poly>) -> Poly {
    list.retain(|p| !p.is_zero());
    if list.is_empty() {
        return Poly::zero();
    }
    list.sort_by_key(|p| p.len());
    let mut g = list[0].primitive().1;
    for p in &list[1..] {
        if g.is_constant() {
            return Poly::one();
        }
        g = gcd(&g, p);
    }
    if g.is_constant() {
        Poly::one()
    } else {
        g
    }
}

/// Pseudo-remainder of `a` by `b` with respect to `x`.
fn prem(a: &Poly, b: &Poly, x: &Var) -> Poly {
    let bc = b.coeffs_in(x);
    let m = bc.len() - 1;
    let lc = &bc[m];
    let mut r = a.coeffs_in(x);
    let mut delta = r.len() as i64 - m as i64;
    while r.len() > m {
        let d = r.len() - 1;
        let lead = r[d].clone();
        let shift = d - m;
        for c in r.iter_mut() {
            *c = c.mul(lc);
        }
        for (i, bi) in bc.iter().enumerate().take(m) {
            r[shift + i] = r[shift + i].sub(&lead.mul(bi));
        }
        r.truncate(d);
        while r.last().is_some_and(|c| c.is_zero()) {
            r.pop();
        }
        delta -= 1;
    }
    if r.is_empty() {
        return Poly::zero();
    }
    let out = Poly::from_coeffs_in(x, &r);
    if delta > 0 {
        out.mul(&lc.pow(delta as u32))
    } else {
        out
    }
}

/// `(p / g, g)`-style helper: the monomial content as a polynomial.
pub fn monomial_part(p: &Poly) -> (Monomial, Poly) {
    let m = p.monomial_content();
    let rest = p.div_monomial(&m);
    (m, rest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbolic::symbol::Symbol;

    fn q(i: usize) -> Poly {
        Poly::symbol(Symbol::q(i, 0))
    }

    #[test]
    fn gcd_recovers_common_factor() {
        let f = q(0).add(&q(1).mul(&q(2))).add(&Poly::from_int(3));
        let a = f.mul(&q(0).sub(&q(2)).pow(2));
        let b = f.mul(&q(1).add(&q(2)).add(&Poly::one()));
        assert_eq!(gcd(&a, &b), f.primitive().1);
    }

    #[test]
    fn coprime_inputs_are_detected() {
        let a = q(0).mul(&q(0)).add(&q(1));
        let b = q(0).add(&q(1)).add(&Poly::one());
        assert!(proven_coprime(&a, &b));
        assert!(gcd(&a, &b).is_one());
    }

    #[test]
    fn monomial_content_enters_the_gcd() {
        let a = q(0).mul(&q(0)).mul(&q(1).add(&Poly::one()));
        let b = q(0).mul(&q(2));
        assert_eq!(gcd(&a, &b), q(0));
        let (m, rest) = monomial_part(&a);
        assert_eq!(Poly::term(m, Coef::one()).mul(&rest), a);
    }
}
