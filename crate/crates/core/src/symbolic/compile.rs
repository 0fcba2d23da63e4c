//! Expressions lowered to flat `f64` code for repeated evaluation.

use num_traits::ToPrimitive;
use smallvec::SmallVec;

use super::expr::Expr;
use super::poly::{Poly, Var};
use super::symbol::Symbol;
use crate::error::EvalError;

#[derive(Clone, Debug)]
struct FlatPoly {
    terms: Vec<(f64, SmallVec<[(u32, i32); 4]>)>,
}

impl FlatPoly {
    fn eval(&self, slots: &[f64]) -> f64 {
        let mut total = 0.0;
        for (c, fs) in &self.terms {
            let mut t = *c;
            for (i, e) in fs {
                let x = slots[*i as usize];
                t *= match e {
                    1 => x,
                    2 => x * x,
                    _ => x.powi(*e),
                };
            }
            total += t;
        }
        total
    }

    /// Sum of absolute term values, a scale for relative tolerances.
    fn magnitude(&self, slots: &[f64]) -> f64 {
        let mut total = 0.0;
        for (c, fs) in &self.terms {
            let mut t = c.abs();
            for (i, e) in fs {
                t *= slots[*i as usize].abs().powi(*e);
            }
            total += t;
        }
        total
    }
}

/// An expression compiled against a fixed ordering of input symbols.
#[derive(Clone, Debug)]
pub struct Compiled {
    n_inputs: usize,
    atoms: Vec<FlatPoly>,
    num: FlatPoly,
    den: Vec<(FlatPoly, i32)>,
}

struct Lowering<'a> {
    inputs: &'a [Symbol],
    atoms: Vec<(Var, FlatPoly)>,
}

impl Lowering<'_> {
    fn slot(&mut self, v: &Var) -> Result<u32, EvalError> {
        match v {
            Var::Sym(s) => self
                .inputs
                .iter()
                .position(|x| x == s)
                .map(|i| i as u32)
                .ok_or_else(|| EvalError::MissingSymbol(s.to_string())),
            Var::Sqrt(r) => {
                if let Some(i) = self.atoms.iter().position(|(w, _)| w == v) {
                    return Ok((self.inputs.len() + i) as u32);
                }
                let inner = self.lower(r.poly())?;
                self.atoms.push((v.clone(), inner));
                Ok((self.inputs.len() + self.atoms.len() - 1) as u32)
            }
        }
    }

    fn lower(&mut self, p: &Poly) -> Result<FlatPoly, EvalError> {
        let mut terms = Vec::with_capacity(p.len());
        for (m, c) in p.terms() {
            let mut fs = SmallVec::new();
            for (v, e) in m.factors() {
                fs.push((self.slot(v)?, *e as i32));
            }
            terms.push((c.to_f64().unwrap_or(f64::NAN), fs));
        }
        Ok(FlatPoly { terms })
    }
}

impl Compiled {
    pub fn new(e: &Expr, inputs: &[Symbol]) -> Result<Compiled, EvalError> {
        let mut low = Lowering { inputs, atoms: Vec::new() };
        let num = low.lower(e.numer())?;
        let mut den = Vec::new();
        for (f, k) in e.den_factors() {
            den.push((low.lower(f)?, *k as i32));
        }
        Ok(Compiled { n_inputs: inputs.len(), atoms: low.atoms.into_iter().map(|(_, p)| p).collect(), num, den })
    }

    fn slots(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut slots = Vec::with_capacity(self.n_inputs + self.atoms.len());
        slots.extend_from_slice(&x[..self.n_inputs]);
        for a in &self.atoms {
            let r = a.eval(&slots);
            if r < 0.0 {
                return Err(EvalError::NegativeSqrt(r));
            }
            slots.push(r.sqrt());
        }
        Ok(slots)
    }

    fn den_value(&self, slots: &[f64]) -> Result<f64, EvalError> {
        let mut d = 1.0;
        for (f, k) in &self.den {
            d *= f.eval(slots).powi(*k);
        }
        if d == 0.0 || !d.is_finite() {
            return Err(EvalError::Pole);
        }
        Ok(d)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        if self.atoms.is_empty() && self.den.is_empty() {
            return Ok(self.num.eval(x));
        }
        let slots = self.slots(x)?;
        Ok(self.num.eval(&slots) / self.den_value(&slots)?)
    }

    /// Value together with the magnitude of the largest cancellation scale.
    pub fn eval_scaled(&self, x: &[f64]) -> Result<(f64, f64), EvalError> {
        let slots = self.slots(x)?;
        let d = self.den_value(&slots)?;
        Ok((self.num.eval(&slots) / d, self.num.magnitude(&slots) / d.abs()))
    }
}

/// Several expressions sharing one input ordering.
#[derive(Clone, Debug)]
pub struct CompiledVec {
    items: Vec<Compiled>,
}

impl CompiledVec {
    pub fn new(es: &[Expr], inputs: &[Symbol]) -> Result<CompiledVec, EvalError> {
        Ok(CompiledVec { items: es.iter().map(|e| Compiled::new(e, inputs)).collect::<Result<_, _>>()? })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.items.iter().map(|c| c.eval(x)).collect()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, c) in out.iter_mut().zip(&self.items) {
            *o = c.eval(x)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compiled_matches_interpreted() {
        let q = |i| Expr::symbol(Symbol::q(i, 0));
        let e = (q(1) * q(1) + Expr::one()).sqrt() * q(2) / (q(1) - Expr::from_int(3)) + Expr::param("g");
        let inputs = vec![Symbol::q(1, 0), Symbol::q(2, 0), Symbol::param("g")];
        let c = Compiled::new(&e, &inputs).unwrap();
        let x = [0.7, -1.3, 2.0];
        let direct = e.eval_with(&|s| inputs.iter().position(|t| t == s).map(|i| x[i])).unwrap();
        assert!((c.eval(&x).unwrap() - direct).abs() < 1e-14);
        assert!(Compiled::new(&e, &inputs[..2]).is_err());
    }
}
