//! Linear algebra over canonical expressions and small numeric helpers.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::expr::Expr;
use super::symbol::Symbol;

/// Bareiss fraction-free forward elimination on `m` (rows of equal length),
/// pivoting only inside the first `ncols` columns. Returns the pivot columns.
fn bareiss(m: &mut [Vec<Expr>], ncols: usize) -> Vec<usize> {
    let rows = m.len();
    let mut prev = Expr::one();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        if r >= rows {
            break;
        }
        // smallest nonzero candidate keeps expression growth down
        let Some(p) = (r..rows).filter(|&i| !m[i][c].is_zero()).min_by_key(|&i| m[i][c].size()) else {
            continue;
        };
        m.swap(r, p);
        let width = m[r].len();
        for i in (r + 1)..rows {
            let f = m[i][c].clone();
            for j in 0..width {
                if j == c {
                    continue;
                }
                let v = &(&m[r][c] * &m[i][j]) - &(&f * &m[r][j]);
                m[i][j] = &v / &prev;
            }
            m[i][c] = Expr::zero();
        }
        // rows above the pivot keep their scale; only rows below are updated
        prev = m[r][c].clone();
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn determinant(m: &[Vec<Expr>]) -> Expr {
    let n = m.len();
    if n == 0 {
        return Expr::one();
    }
    assert!(m.iter().all(|row| row.len() == n), "determinant of a non-square matrix");
    let mut a = m.to_vec();
    let mut sign = 1;
    let mut prev = Expr::one();
    for k in 0..n {
        let Some(p) = (k..n).find(|&i| !a[i][k].is_zero()) else {
            return Expr::zero();
        };
        if p != k {
            a.swap(p, k);
            sign = -sign;
        }
        for i in (k + 1)..n {
            for j in (k + 1)..n {
                let v = &(&a[k][k] * &a[i][j]) - &(&a[i][k] * &a[k][j]);
                a[i][j] = &v / &prev;
            }
        }
        prev = a[k][k].clone();
    }
    if sign < 0 {
        -&a[n - 1][n - 1]
    } else {
        a[n - 1][n - 1].clone()
    }
}

/// Generic rank over the field of expressions.
pub fn rank(m: &[Vec<Expr>]) -> usize {
    if m.is_empty() {
        return 0;
    }
    let mut a = m.to_vec();
    let cols = a[0].len();
    bareiss(&mut a, cols).len()
}

/// Solution of an affine system `Σ_j a_ij x_j + c_i = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSolution {
    /// Pivot unknowns expressed through the free unknowns.
    pub solved: BTreeMap<Symbol, Expr>,
    pub free: Vec<Symbol>,
    /// Expressions that must vanish for the system to be consistent.
    pub residuals: Vec<Expr>,
}

/// Solves equations affine in `unknowns`; `None` if some equation is not affine.
pub fn solve_affine(equations: &[Expr], unknowns: &[Symbol]) -> Option<AffineSolution> {
    let mut rows = Vec::with_capacity(equations.len());
    for e in equations {
        let (coeffs, rest) = e.affine_in(unknowns)?;
        let mut row = coeffs;
        row.push(-rest);
        rows.push(row);
    }
    let m = unknowns.len();
    let pivots = bareiss(&mut rows, m);
    let mut residuals = Vec::new();
    for row in rows.iter().skip(pivots.len()) {
        if !row[m].is_zero() {
            residuals.push(row[m].clone());
        }
    }
    let free: Vec<Symbol> = (0..m).filter(|c| !pivots.contains(c)).map(|c| unknowns[c].clone()).collect();
    let mut solved: BTreeMap<Symbol, Expr> = BTreeMap::new();
    for (r, &c) in pivots.iter().enumerate().rev() {
        let mut rhs = rows[r][m].clone();
        for j in (c + 1)..m {
            if rows[r][j].is_zero() {
                continue;
            }
            let xj = solved.get(&unknowns[j]).cloned().unwrap_or_else(|| Expr::symbol(unknowns[j].clone()));
            rhs = &rhs - &(&rows[r][j] * &xj);
        }
        solved.insert(unknowns[c].clone(), &rhs / &rows[r][c]);
    }
    Some(AffineSolution { solved, free, residuals })
}

/// Numeric rank from singular values relative to the largest one.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * max).count()
}
