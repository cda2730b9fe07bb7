//! Point-to-point planning through a flat parameterization.
//!
//! The boundary states fix the flat-output jets at `k_i` and `k_f`; every
//! other sample of `y` is free. The boundary equations are solved by a damped
//! minimum-norm Newton iteration, and `(x, u)` is recovered through `F_x`,
//! `F_u`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;

use crate::expr::{Binding, Expr, VarRef};
use crate::flatness::FlatPair;
use crate::linalg::{solve_min_norm, Matrix};
use crate::system::DiscreteTimeSystem;
use crate::trajectory::{Signal, Trajectory};
use crate::verify::{rng_from_seed, SampleRng};
use crate::Error;

pub const NEWTON_TOLERANCE: f64 = 1e-9;
pub const MAX_HALVINGS: usize = 50;
pub const MAX_ITERATIONS: usize = 100;
pub const MAX_RESTARTS: usize = 50;
/// End-to-end tolerance between the simulated final state and the target.
pub const SIMULATION_TOLERANCE: f64 = 1e-6;

/// Forward rollout `x(k+1) = f(k, x(k), u(k))` from `x(k0) = x0`.
pub fn simulate(sys: &DiscreteTimeSystem, x0: &[f64], k0: i64, u: &[Vec<f64>]) -> Result<Trajectory, Error> {
    if x0.len() != sys.n() || u.iter().any(|row| row.len() != sys.m()) {
        return Err(Error::Precondition("simulation data has wrong dimensions".into()));
    }
    let mut xs = Vec::with_capacity(u.len() + 1);
    xs.push(x0.to_vec());
    let xv = sys.state_vars();
    let uv = sys.input_vars();
    for (step, input) in u.iter().enumerate() {
        let mut b = Binding::new(k0 + step as i64);
        for (v, val) in xv.iter().zip(&xs[step]) {
            b.set(*v, *val);
        }
        for (v, val) in uv.iter().zip(input) {
            b.set(*v, *val);
        }
        let next = sys.f().iter().map(|f| f.evaluate(&b)).collect::<Result<Vec<_>, _>>()?;
        xs.push(next);
    }
    Ok(Trajectory::new(Signal::Tabulated { k0, rows: xs }, Signal::Tabulated { k0, rows: u.to_vec() }))
}

fn jet_binding(y: &Signal, exprs: &[Expr], k: i64) -> Result<Binding, Error> {
    let mut b = Binding::new(k);
    for e in exprs {
        for v in e.variables() {
            b.set(v, y.component(v.index as usize - 1, k + i64::from(v.shift))?);
        }
    }
    Ok(b)
}

/// `x(k) = F_x(k, y(k..))` on `[lo, hi+1]` and `u(k) = F_u(k, y(k..))` on
/// `[lo, hi]`, cross-checked against the dynamics.
pub fn realize(
    sys: &DiscreteTimeSystem,
    pair: &FlatPair,
    y: &Signal,
    (lo, hi): (i64, i64),
) -> Result<Trajectory, Error> {
    let param = pair.param();
    let eval = |exprs: &[Expr], k: i64| -> Result<Vec<f64>, Error> {
        let b = jet_binding(y, exprs, k)?;
        exprs
            .iter()
            .map(|e| {
                e.evaluate(&b).map_err(|err| match err {
                    Error::DivisionNearZero => Error::SingularParameterization { k },
                    other => other,
                })
            })
            .collect()
    };
    let x = (lo..=hi + 1).map(|k| eval(param.fx(), k)).collect::<Result<Vec<_>, _>>()?;
    let u = (lo..=hi).map(|k| eval(param.fu(), k)).collect::<Result<Vec<_>, _>>()?;
    let traj = Trajectory::new(Signal::Tabulated { k0: lo, rows: x }, Signal::Tabulated { k0: lo, rows: u });
    let report = sys.check_trajectory(&traj, (lo, hi));
    if !report.passed {
        return Err(Error::InvalidTrajectory { residual: report.max_abs_deviation });
    }
    Ok(traj)
}

#[derive(Clone, Debug)]
pub struct PlanProblem {
    pub pair: FlatPair,
    pub x_i: Vec<f64>,
    pub k_i: i64,
    pub x_f: Vec<f64>,
    pub k_f: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    /// `y(k)` for `k ∈ [k_i, k_f + r - 1]`.
    pub y: Signal,
    /// `x` on `[k_i, k_f]`, `u` on `[k_i, k_f - 1]`.
    pub realized: Trajectory,
    /// Max boundary residual `|F_x - x_i|`, `|F_x - x_f|`.
    pub boundary_residual: f64,
    /// Max deviation of the simulated final state from `x_f`.
    pub simulation_error: f64,
    pub restarts: usize,
}

/// Boundary equations `F_x(k_b, y(k_b..)) = x_b` over the stacked unknowns
/// `y_j(k_i + t)`.
struct Boundary<'a> {
    pair: &'a FlatPair,
    k_i: i64,
    len: usize,
    rows: Vec<(i64, usize, f64)>,
    gradients: Vec<Vec<(VarRef, Expr)>>,
}

impl<'a> Boundary<'a> {
    fn new(p: &'a PlanProblem, len: usize) -> Self {
        let param = p.pair.param();
        let mut rows = Vec::new();
        for (kb, target) in [(p.k_i, &p.x_i), (p.k_f, &p.x_f)] {
            for (i, v) in target.iter().enumerate() {
                rows.push((kb, i, *v));
            }
        }
        let vars = param.jet_vars(1);
        let gradients = param
            .fx()
            .iter()
            .map(|f| vars.iter().map(|v| (*v, f.differentiate(*v))).filter(|(_, d)| !d.is_zero()).collect())
            .collect();
        Boundary { pair: &p.pair, k_i: p.k_i, len, rows, gradients }
    }

    fn unknowns(&self) -> usize {
        self.len * self.pair.param().m()
    }

    fn index(&self, v: &VarRef, kb: i64) -> usize {
        (v.index as usize - 1) * self.len + (kb - self.k_i + i64::from(v.shift)) as usize
    }

    fn binding(&self, y: &DVector<f64>, kb: i64) -> Binding {
        let mut b = Binding::new(kb);
        for v in self.pair.param().jet_vars(1) {
            b.set(v, y[self.index(&v, kb)]);
        }
        b
    }

    /// Residuals and Jacobian restricted to `rows`.
    fn evaluate(&self, y: &DVector<f64>, rows: &[usize]) -> Result<(DVector<f64>, Matrix), Error> {
        let fx = self.pair.param().fx();
        let mut res = DVector::zeros(rows.len());
        let mut jac = Matrix::zeros(rows.len(), self.unknowns());
        for (r, &row) in rows.iter().enumerate() {
            let (kb, i, target) = self.rows[row];
            let b = self.binding(y, kb);
            res[r] = fx[i].evaluate(&b)? - target;
            for (v, d) in &self.gradients[i] {
                jac[(r, self.index(v, kb))] = d.evaluate(&b)?;
            }
        }
        Ok((res, jac))
    }
}

/// Damped minimum-norm Newton on `rows`, moving only the unknowns in
/// `free`.
fn newton(problem: &Boundary<'_>, y: &mut DVector<f64>, rows: &[usize], free: &[usize]) -> Result<f64, Error> {
    let mask = |jac: &mut Matrix| {
        for c in 0..jac.ncols() {
            if !free.contains(&c) {
                jac.column_mut(c).fill(0.0);
            }
        }
    };
    let (mut res, mut jac) = problem.evaluate(y, rows)?;
    mask(&mut jac);
    for _ in 0..MAX_ITERATIONS {
        let norm = res.norm();
        if res.amax() < NEWTON_TOLERANCE {
            return Ok(res.amax());
        }
        let step = solve_min_norm(&jac, &(-&res)).ok_or(Error::DivisionNearZero)?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &*y + &step * t;
            if let Ok((r, j)) = problem.evaluate(&trial, rows) {
                if r.norm() < norm {
                    accepted = Some((trial, r, j));
                    break;
                }
            }
            t *= 0.5;
        }
        let (trial, r, mut j) = accepted.ok_or(Error::NoConvergence { restarts: 0, residual: res.amax() })?;
        mask(&mut j);
        *y = trial;
        res = r;
        jac = j;
    }
    if res.amax() < NEWTON_TOLERANCE {
        Ok(res.amax())
    } else {
        Err(Error::NoConvergence { restarts: 0, residual: res.amax() })
    }
}

fn exclusions_hold(pair: &FlatPair, y: &Signal, (lo, hi): (i64, i64)) -> bool {
    pair.exclusions().iter().all(|ex| {
        (lo..=hi).all(|k| match jet_binding(y, core::slice::from_ref(&ex.expr), k) {
            Ok(b) => ex.admits(&b),
            Err(_) => true,
        })
    })
}

fn attempt(
    sys: &DiscreteTimeSystem,
    p: &PlanProblem,
    boundary: &Boundary<'_>,
    rng: &mut SampleRng,
) -> Result<Plan, Error> {
    let r = p.pair.param().r() as usize;
    let m = p.pair.param().m();
    let len = boundary.len;
    let span = (p.k_f - p.k_i) as usize;
    let mut y = DVector::from_fn(boundary.unknowns(), |_, _| rng.gen_range(-2.0..2.0));
    let n = p.x_i.len();
    let cols = |from: usize, to: usize| -> Vec<usize> {
        (0..m).flat_map(|j| (from..to.min(len)).map(move |t| j * len + t)).collect()
    };
    let initial: Vec<usize> = (0..n).collect();
    let terminal: Vec<usize> = (n..2 * n).collect();
    newton(boundary, &mut y, &initial, &cols(0, r))?;
    newton(boundary, &mut y, &terminal, &cols(span, span + r))?;
    // interior samples: linear interpolation between the two jets plus jitter
    if span > r {
        for j in 0..m {
            let (a, b) = (r - 1, span);
            let (ya, yb) = (y[j * len + a], y[j * len + b]);
            for t in (a + 1)..b {
                let s = (t - a) as f64 / (b - a) as f64;
                y[j * len + t] = ya + s * (yb - ya) + rng.gen_range(-0.5..0.5);
            }
        }
    }
    let all: Vec<usize> = (0..2 * n).collect();
    let residual = newton(boundary, &mut y, &all, &(0..boundary.unknowns()).collect::<Vec<_>>())?;
    let rows = (0..len).map(|t| (0..m).map(|j| y[j * len + t]).collect()).collect();
    let signal = Signal::Tabulated { k0: p.k_i, rows };
    if !exclusions_hold(&p.pair, &signal, (p.k_i, p.k_f)) {
        return Err(Error::SingularParameterization { k: p.k_i });
    }
    let realized = realize(sys, &p.pair, &signal, (p.k_i, p.k_f - 1))?;
    let Signal::Tabulated { rows: u, .. } = &realized.u else { unreachable!() };
    let sim = simulate(sys, &p.x_i, p.k_i, u)?;
    let end = sim.x.at(p.k_f)?;
    let simulation_error = end.iter().zip(&p.x_f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if simulation_error.is_nan() || simulation_error >= SIMULATION_TOLERANCE {
        return Err(Error::NoConvergence { restarts: 0, residual: simulation_error });
    }
    Ok(Plan { y: signal, realized, boundary_residual: residual, simulation_error, restarts: 0 })
}

/// Plans a transition `x_i → x_f` in `k_f - k_i ≥ r` steps. Deterministic
/// in `seed`.
pub fn plan(sys: &DiscreteTimeSystem, problem: &PlanProblem, seed: u64) -> Result<Plan, Error> {
    let r = i64::from(problem.pair.param().r());
    if problem.k_f < problem.k_i + r {
        return Err(Error::Precondition(format!(
            "k_f = {} must be at least k_i + r = {}",
            problem.k_f,
            problem.k_i + r
        )));
    }
    if problem.x_i.len() != sys.n() || problem.x_f.len() != sys.n() {
        return Err(Error::Precondition(format!("boundary states need {} components", sys.n())));
    }
    let len = (problem.k_f + r - problem.k_i) as usize;
    let boundary = Boundary::new(problem, len);
    let mut rng = rng_from_seed(seed);
    let mut best = f64::INFINITY;
    for restart in 0..=MAX_RESTARTS {
        match attempt(sys, problem, &boundary, &mut rng) {
            Ok(mut plan) => {
                plan.restarts = restart;
                return Ok(plan);
            }
            Err(Error::NoConvergence { residual, .. }) => best = best.min(residual),
            Err(_) => {}
        }
    }
    Err(Error::NoConvergence { restarts: MAX_RESTARTS, residual: best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::expr::parse;

    #[test]
    fn simulate_reproduces_product_trajectory() {
        let sys = corpus::product_system();
        let u: Vec<Vec<f64>> = (0..12).map(|k| alloc::vec![k as f64, -(k as f64)]).collect();
        let traj = simulate(&sys, &[0.0; 3], 0, &u).unwrap();
        let closed = corpus::product_trajectory();
        for k in 0..=12 {
            assert_eq!(traj.x.at(k).unwrap(), closed.x.at(k).unwrap());
        }
    }

    #[test]
    fn simulate_from_equilibrium_is_constant() {
        let sys = corpus::nonflat_system();
        let traj = simulate(&sys, &[0.0; 3], 5, &alloc::vec![alloc::vec![0.0, 0.0]; 4]).unwrap();
        for k in 5..=9 {
            assert_eq!(traj.x.at(k).unwrap(), alloc::vec![0.0; 3]);
        }
    }

    #[test]
    fn realize_product_flat_output() {
        let sys = corpus::product_system();
        let y = Signal::closed(alloc::vec![parse("(k - 1)*(k - 2)/2").unwrap(), parse("k*(k - 1)*(k - 2)/6").unwrap()])
            .unwrap()
            .tabulate(-2, 12)
            .unwrap();
        let traj = realize(&sys, &corpus::product_pair(), &y, (-2, 9)).unwrap();
        let closed = corpus::product_trajectory();
        for k in -2..=9 {
            assert_eq!(traj.x.at(k).unwrap(), closed.x.at(k).unwrap());
            assert_eq!(traj.u.at(k).unwrap(), closed.u.at(k).unwrap());
        }
        assert_eq!(traj.x.at(10).unwrap(), closed.x.at(10).unwrap());
    }

    #[test]
    fn constant_flat_output_is_singular() {
        let sys = corpus::product_system();
        let y = Signal::Tabulated { k0: 0, rows: alloc::vec![alloc::vec![1.0, 2.0]; 8] };
        let err = realize(&sys, &corpus::product_pair(), &y, (0, 3)).unwrap_err();
        assert_eq!(err, Error::SingularParameterization { k: 0 });
    }

    #[test]
    fn integrator_realization_of_zero() {
        let sys = corpus::integrator_system();
        let y = Signal::Tabulated { k0: 0, rows: alloc::vec![alloc::vec![0.0]; 6] };
        let traj = realize(&sys, &corpus::integrator_pair(), &y, (0, 4)).unwrap();
        for k in 0..=4 {
            assert_eq!(traj.x.at(k).unwrap(), alloc::vec![0.0]);
            assert_eq!(traj.u.at(k).unwrap(), alloc::vec![0.0]);
        }
    }

    #[test]
    fn integrator_one_step_plan() {
        let sys = corpus::integrator_system();
        let problem =
            PlanProblem { pair: corpus::integrator_pair(), x_i: alloc::vec![0.0], k_i: 0, x_f: alloc::vec![1.0], k_f: 1 };
        let plan = plan(&sys, &problem, 1).unwrap();
        assert!((plan.y.component(0, 0).unwrap()).abs() < 1e-12);
        assert!((plan.y.component(0, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((plan.realized.u.component(0, 0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_too_short() {
        let sys = corpus::product_system();
        let problem =
            PlanProblem { pair: corpus::product_pair(), x_i: alloc::vec![0.0; 3], k_i: 0, x_f: alloc::vec![0.0; 3], k_f: 0 };
        assert!(matches!(plan(&sys, &problem, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn product_plan_to_reference_state() {
        let sys = corpus::product_system();
        let x_f = corpus::product_trajectory().x.at(3).unwrap();
        assert_eq!(x_f, alloc::vec![3.0, -3.0, -5.0]);
        let problem = PlanProblem { pair: corpus::product_pair(), x_i: alloc::vec![0.0; 3], k_i: 0, x_f, k_f: 5 };
        let a = plan(&sys, &problem, 42).unwrap();
        assert!(a.simulation_error < SIMULATION_TOLERANCE);
        assert!(a.boundary_residual < NEWTON_TOLERANCE);
        let b = plan(&sys, &problem, 42).unwrap();
        assert_eq!(a, b);
    }
}
