//! Fixed-step RK4 integration of vector fields and trajectory monitors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::{CoordinateMap, VectorFieldExpr};
use crate::symbolic::{ChartSpec, Compiled, Expr, NumericPoint, Symbol};
use crate::constraints::Surface;

/// Norm beyond which integration stops.
pub const OVERFLOW_GUARD: f64 = 1e100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    Lagrangian,
    Unified,
    Phase,
}

impl Space {
    pub fn coords(self, chart: &ChartSpec) -> Vec<Symbol> {
        match self {
            Space::Lagrangian => chart.lagrangian_coords(),
            Space::Unified => chart.w_coords(),
            Space::Phase => chart.phase_coords(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub space: Space,
    pub coords: Vec<Symbol>,
    pub params: BTreeMap<String, f64>,
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Why the run stopped early, if it did.
    pub diagnostic: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn index_of(&self, s: &Symbol) -> Option<usize> {
        self.coords.iter().position(|c| c == s)
    }

    /// Values of one coordinate along the trajectory.
    pub fn series(&self, s: &Symbol) -> Option<Vec<f64>> {
        let i = self.index_of(s)?;
        Some(self.states.iter().map(|x| x[i]).collect())
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        Some((*self.times.last()?, self.states.last()?.as_slice()))
    }

    pub fn point(&self, i: usize) -> NumericPoint {
        let mut pt: NumericPoint =
            self.coords.iter().cloned().zip(self.states[i].iter().copied()).collect();
        pt.extend_params(&self.params);
        pt
    }

    fn param_inputs(&self) -> (Vec<Symbol>, Vec<f64>) {
        self.params.iter().map(|(k, v)| (Symbol::param(k), *v)).unzip()
    }

    /// Evaluates `f` at every point.
    pub fn evaluate(&self, f: &Expr) -> Result<Vec<f64>> {
        let (psyms, pvals) = self.param_inputs();
        let inputs: Vec<Symbol> = self.coords.iter().cloned().chain(psyms).collect();
        let c = Compiled::new(f, &inputs).map_err(|e| Error::Invalid(format!("cannot evaluate {f} on the trajectory: {e}")))?;
        let mut buf = vec![0.0; inputs.len()];
        buf[self.coords.len()..].copy_from_slice(&pvals);
        self.states
            .iter()
            .map(|x| {
                buf[..x.len()].copy_from_slice(x);
                c.eval(&buf).map_err(Error::Eval)
            })
            .collect()
    }

    /// CSV with a header `t,<coords>`; numbers use Rust's shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for c in &self.coords {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{t:?}").unwrap();
            for v in x {
                write!(out, ",{v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// A vector field evaluated numerically. Coefficients left undetermined are
/// chosen as the minimum-norm solution of their linear equations at each point.
pub struct NumericField {
    dim: usize,
    params: Vec<f64>,
    unknowns: usize,
    unknown_symbols: Vec<Symbol>,
    components: Vec<Option<Compiled>>,
    /// Rows `[a_1 … a_m, c]` of `Σ a_j u_j + c = 0`.
    equations: Vec<Vec<Compiled>>,
}

impl NumericField {
    pub fn new(x: &VectorFieldExpr, coords: &[Symbol], params: &BTreeMap<String, f64>) -> Result<NumericField> {
        NumericField::with_equations(x, coords, params, &[])
    }

    pub fn with_equations(
        x: &VectorFieldExpr,
        coords: &[Symbol],
        params: &BTreeMap<String, f64>,
        equations: &[Expr],
    ) -> Result<NumericField> {
        let mut unknowns: Vec<Symbol> =
            x.free_symbols().into_iter().chain(equations.iter().flat_map(|e| e.free_symbols())).filter(|s| s.is_unknown()).collect();
        unknowns.sort();
        unknowns.dedup();
        for (s, _) in x.components() {
            if !coords.contains(s) {
                return Err(Error::Invalid(format!("field has a component along {s}, which is not a coordinate of the space")));
            }
        }
        let (psyms, pvals): (Vec<Symbol>, Vec<f64>) = params.iter().map(|(k, v)| (Symbol::param(k), *v)).unzip();
        let inputs: Vec<Symbol> = coords.iter().cloned().chain(psyms).chain(unknowns.iter().cloned()).collect();
        let compile = |e: &Expr| {
            Compiled::new(e, &inputs).map_err(|err| Error::Invalid(format!("field coefficient {e} is not numeric on this space: {err}")))
        };
        let mut components = Vec::with_capacity(coords.len());
        for c in coords {
            let e = x.get(c);
            components.push(if e.is_zero() { None } else { Some(compile(&e)?) });
        }
        let mut rows = Vec::with_capacity(equations.len());
        for e in equations {
            let (a, b) = e
                .affine_in(&unknowns)
                .ok_or_else(|| Error::Invalid(format!("equation {e} is not linear in the free coefficients")))?;
            rows.push(a.iter().chain(std::iter::once(&b)).map(compile).collect::<Result<Vec<_>>>()?);
        }
        Ok(NumericField { dim: coords.len(), params: pvals, unknowns: unknowns.len(), unknown_symbols: unknowns, components, equations: rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Undetermined coefficients of the field.
    pub fn unknown_symbols(&self) -> &[Symbol] {
        &self.unknown_symbols
    }

    /// `state ++ params ++ unknowns`, with the unknowns closed at `state`.
    pub fn closed_input(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(self.dim + self.params.len() + self.unknowns);
        input.extend_from_slice(state);
        input.extend_from_slice(&self.params);
        input.resize(self.dim + self.params.len() + self.unknowns, 0.0);
        if self.unknowns > 0 && !self.equations.is_empty() {
            let m = self.unknowns;
            let mut a = DMatrix::zeros(self.equations.len(), m);
            let mut b = DVector::zeros(self.equations.len());
            for (i, row) in self.equations.iter().enumerate() {
                for (j, c) in row[..m].iter().enumerate() {
                    a[(i, j)] = c.eval(&input)?;
                }
                b[i] = -row[m].eval(&input)?;
            }
            let svd = a.svd(true, true);
            let eps = 1e-10 * svd.singular_values.iter().cloned().fold(0.0, f64::max);
            let u = svd.solve(&b, eps).map_err(|e| Error::Numeric(e.to_string()))?;
            input[self.dim + self.params.len()..].copy_from_slice(u.as_slice());
        }
        Ok(input)
    }

    pub fn eval(&self, state: &[f64], out: &mut [f64]) -> Result<()> {
        let input = self.closed_input(state)?;
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = match c {
                Some(c) => c.eval(&input)?,
                None => 0.0,
            };
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntegratorSettings {
    pub h: f64,
    pub t_end: f64,
}

impl IntegratorSettings {
    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Invalid(format!("step size must be positive, got {}", self.h)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::Invalid(format!("end time must be non-negative, got {}", self.t_end)));
        }
        Ok(())
    }

    /// Number of full steps, the last one possibly shortened to land on `t_end`.
    fn steps(&self) -> usize {
        let n = self.t_end / self.h;
        let r = n.round();
        if (n - r).abs() < 1e-9 * n.max(1.0) {
            r as usize
        } else {
            n.ceil() as usize
        }
    }
}

fn rk4_step(f: &NumericField, x: &[f64], h: f64, k: &mut [Vec<f64>; 4], tmp: &mut [f64]) -> Result<Vec<f64>> {
    f.eval(x, &mut k[0])?;
    for i in 0..x.len() {
        tmp[i] = x[i] + 0.5 * h * k[0][i];
    }
    f.eval(tmp, &mut k[1])?;
    for i in 0..x.len() {
        tmp[i] = x[i] + 0.5 * h * k[1][i];
    }
    f.eval(tmp, &mut k[2])?;
    for i in 0..x.len() {
        tmp[i] = x[i] + h * k[2][i];
    }
    f.eval(tmp, &mut k[3])?;
    Ok((0..x.len()).map(|i| x[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i])).collect())
}

/// Classic fourth-order Runge-Kutta on a compiled field.
pub fn integrate_numeric(
    field: &NumericField,
    space: Space,
    coords: &[Symbol],
    params: &BTreeMap<String, f64>,
    x0: Vec<f64>,
    settings: IntegratorSettings,
) -> Result<Trajectory> {
    settings.validate()?;
    let dim = field.dim();
    if x0.len() != dim {
        return Err(Error::Invalid(format!("initial state has {} entries, expected {dim}", x0.len())));
    }
    let steps = settings.steps();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0);
    let mut k = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut tmp = vec![0.0; dim];
    let mut diagnostic = None;
    for i in 1..=steps {
        let t_prev = (i - 1) as f64 * settings.h;
        let t = if i == steps { settings.t_end } else { i as f64 * settings.h };
        let x = states.last().unwrap();
        match rk4_step(field, x, t - t_prev, &mut k, &mut tmp) {
            Ok(next) if next.iter().all(|v| v.is_finite()) && next.iter().map(|v| v * v).sum::<f64>().sqrt() <= OVERFLOW_GUARD => {
                times.push(t);
                states.push(next);
            }
            Ok(_) => {
                diagnostic = Some(format!("state exceeded the overflow guard at t = {t}"));
                break;
            }
            Err(e) => {
                diagnostic = Some(format!("field evaluation failed at t = {t_prev}: {e}"));
                break;
            }
        }
    }
    Ok(Trajectory { space, coords: coords.to_vec(), params: params.clone(), h: settings.h, times, states, diagnostic })
}

/// Integrates `x` from `x0`. Coordinates absent from `x0` start at zero;
/// parameters are read from `x0`.
pub fn integrate(
    x: &VectorFieldExpr,
    space: Space,
    chart: &ChartSpec,
    x0: &NumericPoint,
    settings: IntegratorSettings,
) -> Result<Trajectory> {
    let coords = space.coords(chart);
    let params = point_params(chart, x0)?;
    let field = NumericField::new(x, &coords, &params)?;
    let start = coords.iter().map(|c| x0.get(c).unwrap_or(0.0)).collect();
    integrate_numeric(&field, space, &coords, &params, start, settings)
}

fn point_params(chart: &ChartSpec, x0: &NumericPoint) -> Result<BTreeMap<String, f64>> {
    let mut params = BTreeMap::new();
    for s in chart.param_symbols() {
        let v = x0.get(&s).ok_or_else(|| Error::Invalid(format!("no value for parameter {s}")))?;
        params.insert(s.to_string(), v);
    }
    Ok(params)
}

/// Moves `seed` onto the zero set of `constraints` by damped Newton in `coords`.
pub fn project_onto(constraints: &[Expr], coords: &[Symbol], params: &BTreeMap<String, f64>, seed: &[f64]) -> Result<Vec<f64>> {
    let (psyms, pvals): (Vec<Symbol>, Vec<f64>) = params.iter().map(|(k, v)| (Symbol::param(k), *v)).unzip();
    let surface = Surface::new(coords.to_vec(), psyms, constraints)?;
    surface
        .project(seed, &pvals)
        .ok_or_else(|| Error::Numeric("could not move the initial data onto the constraint surface".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub initial: f64,
    /// `max_t |f(x_t) - f(x_0)|`.
    pub drift: f64,
    pub series: Vec<f64>,
}

pub fn conserved(traj: &Trajectory, f: &Expr) -> Result<DriftReport> {
    let values = traj.evaluate(f)?;
    let initial = values.first().copied().unwrap_or(0.0);
    let series: Vec<f64> = values.iter().map(|v| v - initial).collect();
    let drift = series.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(DriftReport { initial, drift, series })
}

/// Pointwise image of a trajectory under `map`, landing on `target` coordinates.
pub fn project_trajectory(traj: &Trajectory, map: &CoordinateMap, target: &[Symbol], space: Space) -> Result<Trajectory> {
    let images = target.iter().map(|s| map.image(s)).collect::<Result<Vec<_>>>()?;
    let columns = images.iter().map(|e| traj.evaluate(e)).collect::<Result<Vec<_>>>()?;
    let states = (0..traj.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
    Ok(Trajectory {
        space,
        coords: target.to_vec(),
        params: traj.params.clone(),
        h: traj.h,
        times: traj.times.clone(),
        states,
        diagnostic: traj.diagnostic.clone(),
    })
}

/// Largest central-difference defect `|ẋ - X(x)|` over interior grid points.
pub fn field_residual(traj: &Trajectory, x: &VectorFieldExpr) -> Result<f64> {
    let mut worst = 0.0f64;
    for (j, c) in traj.coords.iter().enumerate() {
        let rate = traj.evaluate(&x.get(c))?;
        for i in 1..traj.len().saturating_sub(1) {
            let dt = traj.times[i + 1] - traj.times[i - 1];
            let fd = (traj.states[i + 1][j] - traj.states[i - 1][j]) / dt;
            worst = worst.max((fd - rate[i]).abs());
        }
    }
    Ok(worst)
}

/// Holonomy defects `max_t |q_{i+1} - Δq_i/Δt|` for `0 ≤ i ≤ 2k-2`, maximized
/// over components, on a trajectory in `T^{2k-1}Q`.
pub fn holonomy_defects(traj: &Trajectory, chart: &ChartSpec) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chart.k - 1);
    for i in 0..2 * chart.k - 1 {
        let mut worst = 0.0f64;
        for a in 0..chart.n {
            let lo = traj.series(&chart.q(i, a)).ok_or_else(|| Error::Invalid("trajectory is not on T^{2k-1}Q".into()))?;
            let hi = traj.series(&chart.q(i + 1, a)).ok_or_else(|| Error::Invalid("trajectory is not on T^{2k-1}Q".into()))?;
            for t in 1..traj.len().saturating_sub(1) {
                let dt = traj.times[t + 1] - traj.times[t - 1];
                worst = worst.max((hi[t] - (lo[t + 1] - lo[t - 1]) / dt).abs());
            }
        }
        out.push(worst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jetcalc::LagrangianSystem;
    use crate::symbolic::{parse_system, SamplingPolicy};
    use crate::unified::UnifiedSystem;

    fn free_particle() -> (ChartSpec, VectorFieldExpr) {
        let s = parse_system("system(dim=1, order=1) L = 1/2*q1^2").unwrap();
        let sys = LagrangianSystem::new(s.chart.clone(), s.lagrangian).unwrap();
        let u = UnifiedSystem::new(&sys);
        let x = u.solve_regular(&sys.hessian(&SamplingPolicy::default())).unwrap();
        (s.chart, u.recover_lagrangian_field(&x))
    }

    #[test]
    fn free_particle_moves_uniformly() {
        let (chart, x) = free_particle();
        let x0: NumericPoint = [(chart.q(0, 0), 0.0), (chart.q(1, 0), 1.0)].into_iter().collect();
        let traj = integrate(&x, Space::Lagrangian, &chart, &x0, IntegratorSettings { h: 1e-3, t_end: 1.0 }).unwrap();
        assert_eq!(traj.len(), 1001);
        let (t, last) = traj.last().unwrap();
        assert_eq!(t, 1.0);
        assert!((last[0] - 1.0).abs() < 1e-12);
        assert_eq!(conserved(&traj, &Expr::from_int(3)).unwrap().drift, 0.0);
    }

    #[test]
    fn zero_field_is_stationary() {
        let (chart, _) = free_particle();
        let x0: NumericPoint = [(chart.q(0, 0), 0.5), (chart.q(1, 0), -2.0)].into_iter().collect();
        let traj = integrate(&VectorFieldExpr::new(), Space::Lagrangian, &chart, &x0, IntegratorSettings { h: 0.1, t_end: 1.0 })
            .unwrap();
        assert!(traj.states.iter().all(|s| s == &vec![0.5, -2.0]));
    }

    #[test]
    fn partial_last_step_lands_on_end_time() {
        let (chart, x) = free_particle();
        let x0: NumericPoint = [(chart.q(1, 0), 1.0)].into_iter().collect();
        let traj = integrate(&x, Space::Lagrangian, &chart, &x0, IntegratorSettings { h: 0.3, t_end: 1.0 }).unwrap();
        assert_eq!(traj.times.len(), 5);
        assert_eq!(traj.last().unwrap().0, 1.0);
        assert!((traj.last().unwrap().1[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_step() {
        let (chart, x) = free_particle();
        let r = integrate(&x, Space::Lagrangian, &chart, &NumericPoint::new(), IntegratorSettings { h: 0.0, t_end: 1.0 });
        assert!(matches!(r, Err(Error::Invalid(_))));
    }

    #[test]
    fn csv_layout() {
        let (chart, x) = free_particle();
        let x0: NumericPoint = [(chart.q(1, 0), 1.0)].into_iter().collect();
        let traj = integrate(&x, Space::Lagrangian, &chart, &x0, IntegratorSettings { h: 0.5, t_end: 1.0 }).unwrap();
        assert_eq!(traj.to_csv(), "t,q0,q1\n0.0,0.0,1.0\n0.5,0.5,1.0\n1.0,1.0,1.0\n");
    }

    #[test]
    fn overflow_truncates() {
        let s = parse_system("system(dim=1, order=1) L = 1/2*q1^2").unwrap();
        let c = s.chart;
        let mut x = VectorFieldExpr::new();
        x.set(c.q(0, 0), c.qe(0, 0).pow(3));
        let x0: NumericPoint = [(c.q(0, 0), 10.0)].into_iter().collect();
        let traj = integrate(&x, Space::Lagrangian, &c, &x0, IntegratorSettings { h: 0.1, t_end: 10.0 }).unwrap();
        assert!(traj.diagnostic.is_some());
        assert!(traj.len() < 101);
    }

    #[test]
    fn min_norm_closure_of_free_coefficient() {
        let s = parse_system("system(dim=1, order=1) L = 1/2*q1^2").unwrap();
        let c = s.chart;
        let u = c.unknown(crate::symbolic::UnknownKind::HighF, 1, 0);
        let mut x = VectorFieldExpr::new();
        x.set(c.q(0, 0), c.qe(1, 0));
        x.set(c.q(1, 0), Expr::symbol(u.clone()));
        // 2u + 4 = 0 forces u = -2
        let eq = Expr::from_int(2) * Expr::symbol(u) + Expr::from_int(4);
        let f = NumericField::with_equations(&x, &c.lagrangian_coords(), &BTreeMap::new(), &[eq]).unwrap();
        let mut out = [0.0; 2];
        f.eval(&[0.0, 1.0], &mut out).unwrap();
        assert!((out[1] + 2.0).abs() < 1e-12);
    }
}
