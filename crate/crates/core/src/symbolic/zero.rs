//! Seeded numeric sampling and the combined symbolic/numeric zero test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::chart::NumericPoint;
use super::compile::Compiled;
use super::expr::Expr;
use super::symbol::Symbol;

pub const DEFAULT_SEED: u64 = 0xC0FFEE;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplingPolicy {
    pub seed: u64,
    pub samples: usize,
    /// Sample magnitudes are drawn from `[lo, hi]` with a random sign.
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
    pub max_retries: usize,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy { seed: DEFAULT_SEED, samples: 32, lo: 0.1, hi: 2.0, tol: 1e-9, max_retries: 256 }
    }
}

impl SamplingPolicy {
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let m = rng.gen_range(self.lo..=self.hi);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    }

    pub fn random_point(&self, symbols: &[Symbol], rng: &mut ChaCha8Rng) -> NumericPoint {
        symbols.iter().map(|s| (s.clone(), self.draw(rng))).collect()
    }

    pub fn random_values(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroVerdict {
    ProvenZero,
    ProvenNonzero,
    NumericallyZero,
    Unknown,
}

impl ZeroVerdict {
    /// Zero either symbolically or on every sample.
    pub fn vanishes(self) -> bool {
        matches!(self, ZeroVerdict::ProvenZero | ZeroVerdict::NumericallyZero)
    }
}

/// Relative smallness test shared by every numeric vanishing check.
pub fn below_tol(value: f64, scale: f64, tol: f64) -> bool {
    value.abs() <= tol * scale.max(1.0)
}

pub fn is_zero(e: &Expr, policy: &SamplingPolicy) -> ZeroVerdict {
    if e.is_zero() {
        return ZeroVerdict::ProvenZero;
    }
    if e.is_constant() {
        return ZeroVerdict::ProvenNonzero;
    }
    let symbols: Vec<Symbol> = e.free_symbols().into_iter().collect();
    let Ok(c) = Compiled::new(e, &symbols) else { return ZeroVerdict::Unknown };
    let mut rng = policy.rng();
    let mut good = 0;
    let mut attempts = 0;
    while good < policy.samples && attempts < policy.samples + policy.max_retries {
        attempts += 1;
        let x = policy.random_values(symbols.len(), &mut rng);
        match c.eval_scaled(&x) {
            Ok((v, scale)) if v.is_finite() => {
                if !below_tol(v, scale, policy.tol) {
                    return ZeroVerdict::ProvenNonzero;
                }
                good += 1;
            }
            _ => continue,
        }
    }
    if good < policy.samples {
        ZeroVerdict::Unknown
    } else {
        ZeroVerdict::NumericallyZero
    }
}
