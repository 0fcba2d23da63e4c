//! Seeded generators shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unimech::jetcalc::LagrangianSystem;
use unimech::symbolic::{parse_system, ChartSpec, Expr, Symbol};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn load(path: &str) -> unimech::symbolic::SystemSource {
    let full = format!("{}/../../systems/{path}", env!("CARGO_MANIFEST_DIR"));
    parse_system(&std::fs::read_to_string(&full).unwrap()).unwrap()
}

pub fn load_system(path: &str) -> LagrangianSystem {
    let s = load(path);
    LagrangianSystem::new(s.chart, s.lagrangian).unwrap()
}

fn small_int(rng: &mut ChaCha8Rng) -> i64 {
    let v = rng.gen_range(1..=5);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

/// A random monomial of total degree `1..=degree` in `vars`.
fn monomial(rng: &mut ChaCha8Rng, vars: &[Symbol], degree: u32) -> Expr {
    let d = rng.gen_range(1..=degree);
    let mut m = Expr::from_int(small_int(rng));
    for _ in 0..d {
        m = m * Expr::symbol(vars.choose(rng).unwrap().clone());
    }
    m
}

/// Random polynomial Lagrangian with `k ≤ 3`, `n ≤ 2`, total degree `≤ 3`.
pub fn random_polynomial_lagrangian(rng: &mut ChaCha8Rng) -> (ChartSpec, Expr) {
    let k = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=2);
    let chart = ChartSpec::new(n, k);
    let vars = chart.q_block(0..k + 1);
    let terms = rng.gen_range(2..=6);
    let mut l = Expr::zero();
    for _ in 0..terms {
        l = l + monomial(rng, &vars, 3);
    }
    // keep at least one top-order term so the order is genuine
    l = l + monomial(rng, &chart.q_block(k..k + 1), 3);
    (chart, l)
}

/// `1/2 q_k^T M q_k` plus lower-order terms with `M` constant, symmetric and
/// invertible. Returns `M` alongside.
pub fn random_regular_quadratic(rng: &mut ChaCha8Rng) -> (ChartSpec, Expr, Vec<Vec<i64>>) {
    let k = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=3);
    let chart = ChartSpec::new(n, k);
    // diagonally dominant keeps M invertible
    let mut m = vec![vec![0i64; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = rng.gen_range(-2..=2);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    for i in 0..n {
        let off: i64 = (0..n).filter(|&j| j != i).map(|j| m[i][j].abs()).sum();
        let sign = if rng.gen_bool(0.5) { 1 } else { -1 };
        m[i][i] = sign * (off + rng.gen_range(1..=3));
    }
    let mut l = Expr::zero();
    for i in 0..n {
        for j in 0..n {
            l = l + Expr::ratio(m[i][j], 2) * chart.qe(k, i) * chart.qe(k, j);
        }
    }
    let lower = chart.q_block(0..k);
    for _ in 0..rng.gen_range(1..=4) {
        l = l + monomial(rng, &lower, 3);
    }
    // mixed terms linear in q_k leave the Hessian unchanged
    l = l + monomial(rng, &lower, 2) * chart.qe(k, rng.gen_range(0..n));
    (chart, l, m)
}

/// Random rational expression in `vars` whose denominators and radicands stay
/// bounded away from zero.
pub fn random_expression(rng: &mut ChaCha8Rng, vars: &[Symbol], depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.8) {
            Expr::symbol(vars.choose(rng).unwrap().clone())
        } else {
            Expr::ratio(small_int(rng), rng.gen_range(1..=4))
        };
    }
    let a = random_expression(rng, vars, depth - 1);
    match rng.gen_range(0..7) {
        0 => a + random_expression(rng, vars, depth - 1),
        1 => a - random_expression(rng, vars, depth - 1),
        2 | 3 => a * random_expression(rng, vars, depth - 1),
        4 => {
            let b = random_expression(rng, vars, depth - 1);
            a / (Expr::ratio(1, 2) + &b * &b)
        }
        5 => a.pow(rng.gen_range(2..=3)),
        _ => (Expr::one() + &a * &a).sqrt(),
    }
}

/// Determinant of a small integer matrix by fraction-free elimination.
pub fn int_det(m: &[Vec<i64>]) -> i128 {
    let n = m.len();
    let mut a: Vec<Vec<i128>> = m.iter().map(|r| r.iter().map(|&v| v as i128).collect()).collect();
    let mut sign = 1;
    let mut prev = 1i128;
    for k in 0..n {
        let Some(p) = (k..n).find(|&i| a[i][k] != 0) else { return 0 };
        if p != k {
            a.swap(p, k);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[k][k] * a[i][j] - a[i][k] * a[k][j]) / prev;
            }
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}
