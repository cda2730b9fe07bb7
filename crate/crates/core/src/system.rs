//! Nonlinear time-varying discrete-time systems `x⁺ = f(k, x, u)` with a
//! system extension `ζ = g(k, x, u)`, and the shift operators acting on
//! functions of the extended coordinates `(k, ζ_[-l..-1], x, u_[0..l])`.

use alloc::format;
use alloc::vec::Vec;

use crate::expr::{Binding, Expr, Substitution, VarGroup, VarRef};
use crate::linalg::SymbolicJacobian;
use crate::trajectory::Trajectory;
use crate::verify::{numeric_equal_all, sampled_rank_check, SampleDomain, VerificationReport};
use crate::Error;

/// Tolerance on the dynamics residual of a trajectory.
pub const TRAJECTORY_TOLERANCE: f64 = 1e-9;

/// Inverse `(x, u) = ψ(k, x⁺, ζ)` of the extended map `(f, g)`.
///
/// Each component is written with `x<i>` standing for `x⁺` and
/// `z<j>_[-1]` standing for `ζ`, so that the entries can be inserted
/// verbatim into the backward-shift rule.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtensionInverse {
    pub x: Vec<Expr>,
    pub u: Vec<Expr>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTimeSystem {
    n: usize,
    m: usize,
    f: Vec<Expr>,
    g: Vec<Expr>,
    psi: Option<ExtensionInverse>,
    equilibrium: Option<(Vec<f64>, Vec<f64>)>,
}

fn check_vars(
    what: &str,
    e: &Expr,
    allowed: impl Fn(&VarRef) -> bool,
) -> Result<(), Error> {
    if let Some(v) = e.variables().into_iter().find(|v| !allowed(v)) {
        return Err(Error::InvalidSystem(format!("{what} = {e} references {v}")));
    }
    Ok(())
}

impl DiscreteTimeSystem {
    /// Builds a system from its right-hand sides `f` (n entries) and the
    /// extension `g` (m entries).
    pub fn new(f: Vec<Expr>, g: Vec<Expr>) -> Result<Self, Error> {
        let n = f.len();
        let m = g.len();
        if n == 0 {
            return Err(Error::InvalidSystem("state dimension must be positive".into()));
        }
        let plain = |v: &VarRef| match v.group {
            VarGroup::State => v.shift == 0 && (v.index as usize) <= n,
            VarGroup::Input => v.shift == 0 && (v.index as usize) <= m,
            _ => false,
        };
        for (i, e) in f.iter().enumerate() {
            check_vars(&format!("f.{}", i + 1), e, plain)?;
        }
        for (j, e) in g.iter().enumerate() {
            check_vars(&format!("g.{}", j + 1), e, plain)?;
        }
        Ok(DiscreteTimeSystem { n, m, f, g, psi: None, equilibrium: None })
    }

    pub fn with_inverse(mut self, psi: ExtensionInverse) -> Result<Self, Error> {
        if psi.x.len() != self.n || psi.u.len() != self.m {
            return Err(Error::InvalidSystem(format!(
                "psi needs {} state and {} input components, got {} and {}",
                self.n,
                self.m,
                psi.x.len(),
                psi.u.len()
            )));
        }
        let (n, m) = (self.n, self.m);
        let slot = |v: &VarRef| match v.group {
            VarGroup::State => (v.index as usize) <= n,
            VarGroup::Zeta => v.shift == -1 && (v.index as usize) <= m,
            _ => false,
        };
        for (i, e) in psi.x.iter().enumerate() {
            check_vars(&format!("psi.x.{}", i + 1), e, slot)?;
        }
        for (j, e) in psi.u.iter().enumerate() {
            check_vars(&format!("psi.u.{}", j + 1), e, slot)?;
        }
        self.psi = Some(psi);
        Ok(self)
    }

    pub fn with_equilibrium(mut self, x0: Vec<f64>, u0: Vec<f64>) -> Result<Self, Error> {
        if x0.len() != self.n || u0.len() != self.m {
            return Err(Error::InvalidSystem("equilibrium has wrong dimensions".into()));
        }
        self.equilibrium = Some((x0, u0));
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn f(&self) -> &[Expr] {
        &self.f
    }

    pub fn g(&self) -> &[Expr] {
        &self.g
    }

    pub fn psi(&self) -> Option<&ExtensionInverse> {
        self.psi.as_ref()
    }

    pub fn equilibrium(&self) -> Option<(&[f64], &[f64])> {
        self.equilibrium.as_ref().map(|(x, u)| (x.as_slice(), u.as_slice()))
    }

    pub fn state_vars(&self) -> Vec<VarRef> {
        (1..=self.n as u32).map(VarRef::x).collect()
    }

    pub fn input_vars(&self) -> Vec<VarRef> {
        (1..=self.m as u32).map(|j| VarRef::u(j, 0)).collect()
    }

    /// `x` followed by `u`.
    pub fn point_vars(&self) -> Vec<VarRef> {
        let mut v = self.state_vars();
        v.extend(self.input_vars());
        v
    }

    /// Wraps an expression as a function on the extended coordinates of
    /// this system.
    pub fn extended(&self, expr: Expr) -> Result<ExtendedFunction, Error> {
        let h = ExtendedFunction::new(expr)?;
        if let Some(v) = h.expr.variables().into_iter().find(|v| match v.group {
            VarGroup::State => v.index as usize > self.n,
            _ => v.index as usize > self.m,
        }) {
            return Err(Error::InvalidCoordinates(format!("{v} is outside the system dimensions")));
        }
        Ok(h)
    }

    /// One forward shift of an expression. Variables outside the extended
    /// coordinates (Δ-variables, flat outputs) are left untouched.
    pub fn forward_shift_expr(&self, e: &Expr) -> Expr {
        let t = Expr::time().add(&Expr::one());
        e.rewrite(
            &|v| match v.group {
                VarGroup::State => Some(self.f[v.index as usize - 1].clone()),
                VarGroup::Zeta if v.shift == -1 => Some(self.g[v.index as usize - 1].clone()),
                VarGroup::Zeta | VarGroup::Input => Some(Expr::var(v.shifted(1))),
                _ => None,
            },
            Some(&t),
        )
    }

    /// `δ^times(h)`.
    pub fn forward_shift(&self, h: &ExtendedFunction, times: u32) -> ExtendedFunction {
        let mut expr = h.expr.clone();
        for _ in 0..times {
            expr = self.forward_shift_expr(&expr);
        }
        ExtendedFunction { expr, l_zeta: h.l_zeta, l_u: h.l_u + times }
    }

    /// One backward shift of an expression using `ψ`.
    pub fn backward_shift_expr(&self, e: &Expr) -> Result<Expr, Error> {
        let psi = self.psi.as_ref().ok_or(Error::MissingInverse)?;
        let t = Expr::time().sub(&Expr::one());
        Ok(e.rewrite(
            &|v| match v.group {
                VarGroup::State => Some(psi.x[v.index as usize - 1].shift_time(-1)),
                VarGroup::Input if v.shift == 0 => Some(psi.u[v.index as usize - 1].shift_time(-1)),
                VarGroup::Zeta | VarGroup::Input => Some(Expr::var(v.shifted(-1))),
                _ => None,
            },
            Some(&t),
        ))
    }

    /// `δ^-times(h)`.
    pub fn backward_shift(&self, h: &ExtendedFunction, times: u32) -> Result<ExtendedFunction, Error> {
        let mut expr = h.expr.clone();
        for _ in 0..times {
            expr = self.backward_shift_expr(&expr)?;
        }
        Ok(ExtendedFunction { expr, l_zeta: h.l_zeta + times, l_u: h.l_u })
    }

    /// Samples `rank ∂_(x,u) f = n`; the singular values of every sample
    /// are kept in the report.
    pub fn check_submersivity(&self, domain: &SampleDomain) -> VerificationReport {
        let jac = SymbolicJacobian::new(&self.f, &self.point_vars());
        self.rank_check("submersivity", &jac, self.n, domain)
    }

    /// Samples regularity of the `(n+m)×(n+m)` Jacobian of `(f, g)`.
    pub fn check_extension_regularity(&self, domain: &SampleDomain) -> VerificationReport {
        let mut fg = self.f.clone();
        fg.extend(self.g.iter().cloned());
        let jac = SymbolicJacobian::new(&fg, &self.point_vars());
        self.rank_check("extension_regularity", &jac, self.n + self.m, domain)
    }

    fn rank_check(
        &self,
        name: &str,
        jac: &SymbolicJacobian,
        expected: usize,
        domain: &SampleDomain,
    ) -> VerificationReport {
        let mut report = sampled_rank_check(name, &[(name, jac, expected)], domain);
        report.notes.push(format!(
            "checked on k in [{}, {}] only; the condition is required for all k",
            domain.k_range.0, domain.k_range.1
        ));
        report
    }

    /// Checks that `ψ` inverts `(f, g)` in both directions.
    pub fn check_inverse(&self, domain: &SampleDomain) -> Result<VerificationReport, Error> {
        let psi = self.psi.as_ref().ok_or(Error::MissingInverse)?;
        // ψ ∘ (f, g) = (x, u)
        let mut forward = Substitution::new();
        for i in 0..self.n {
            forward.insert(VarRef::x(i as u32 + 1), self.f[i].clone());
        }
        for j in 0..self.m {
            forward.insert(VarRef::zeta(j as u32 + 1, -1), self.g[j].clone());
        }
        let lhs: Vec<Expr> = psi.x.iter().chain(&psi.u).map(|e| e.substitute(&forward)).collect();
        let rhs: Vec<Expr> = self.point_vars().into_iter().map(Expr::var).collect();
        let left = numeric_equal_all("psi o (f,g) = id", &lhs, &rhs, domain)?;
        // (f, g) ∘ ψ = (x⁺, ζ)
        let mut backward = Substitution::new();
        for i in 0..self.n {
            backward.insert(VarRef::x(i as u32 + 1), psi.x[i].clone());
        }
        for j in 0..self.m {
            backward.insert(VarRef::u(j as u32 + 1, 0), psi.u[j].clone());
        }
        let lhs: Vec<Expr> = self.f.iter().chain(&self.g).map(|e| e.substitute(&backward)).collect();
        let mut rhs: Vec<Expr> = self.state_vars().into_iter().map(Expr::var).collect();
        rhs.extend((1..=self.m as u32).map(|j| Expr::var(VarRef::zeta(j, -1))));
        let right = numeric_equal_all("(f,g) o psi = id", &lhs, &rhs, domain)?;
        Ok(VerificationReport::merge("inverse", &[left, right]))
    }

    /// True iff `f(k, x0, u0) = x0` for every `k` in the window.
    pub fn check_equilibrium(&self, x0: &[f64], u0: &[f64], (lo, hi): (i64, i64)) -> bool {
        if x0.len() != self.n || u0.len() != self.m {
            return false;
        }
        (lo..=hi).all(|k| {
            let mut b = Binding::new(k);
            for (v, val) in self.point_vars().into_iter().zip(x0.iter().chain(u0)) {
                b.set(v, *val);
            }
            self.f.iter().zip(x0).all(|(f, x)| match f.evaluate(&b) {
                Ok(next) => (next - x).abs() <= TRAJECTORY_TOLERANCE * 1f64.max(x.abs()),
                Err(_) => false,
            })
        })
    }

    /// Dynamics residual `x(k+1) - f(k, x(k), u(k))` over `[lo, hi]`,
    /// restricted to steps where the trajectory is available. Closed-form
    /// rational trajectories are checked in exact arithmetic and must give
    /// an exactly zero residual.
    pub fn check_trajectory(&self, traj: &Trajectory, (lo, hi): (i64, i64)) -> VerificationReport {
        let mut report = VerificationReport::new("trajectory", TRAJECTORY_TOLERANCE);
        let Some((a, b)) = traj.transition_window(lo, hi) else {
            report.fail(format!("trajectory not available on [{lo}, {hi}]"));
            return report;
        };
        if (a, b) != (lo, hi) {
            report.notes.push(format!("checked on the available window [{a}, {b}]"));
        }
        let mut exact_steps = 0;
        for k in a..=b {
            if let (Some(point), Some(next)) = (traj.exact_point(k), traj.x.exact_at(k + 1)) {
                let mapped: Option<Vec<_>> =
                    self.f.iter().map(|f| f.evaluate_exact(k, &point)).collect();
                if let Some(mapped) = mapped {
                    exact_steps += 1;
                    report.samples += 1;
                    for (i, (fx, nx)) in mapped.iter().zip(&next).enumerate() {
                        let diff = *nx - *fx;
                        let residual = (*diff.numer() as f64 / *diff.denom() as f64).abs();
                        report.max_abs_deviation = report.max_abs_deviation.max(residual);
                        report.max_rel_deviation = report.max_rel_deviation.max(residual);
                        if *diff.numer() != 0 {
                            report.fail(format!("x{}({}) differs from f by {residual:e}", i + 1, k + 1));
                        }
                    }
                    continue;
                }
            }
            let step = traj.point_binding(k).and_then(|p| {
                let next = traj.x.at(k + 1)?;
                let fx = self.f.iter().map(|f| f.evaluate(&p)).collect::<Result<Vec<_>, _>>()?;
                Ok((fx, next))
            });
            match step {
                Ok((fx, next)) => {
                    report.samples += 1;
                    for (i, (f, x)) in fx.iter().zip(&next).enumerate() {
                        if report.record(*x, *f) >= TRAJECTORY_TOLERANCE {
                            report.fail(format!(
                                "x{}({}) = {x:e} but f gives {f:e}",
                                i + 1,
                                k + 1
                            ));
                        }
                    }
                }
                Err(e) => report.fail(format!("k={k}: {e}")),
            }
        }
        if exact_steps > 0 {
            report.notes.push(format!("{exact_steps} steps checked in exact arithmetic"));
        }
        report.conclude();
        report
    }
}

/// A function `h(k, ζ_[-l_ζ..-1], x, u_[0..l_u])` on the extended
/// coordinates, together with window bounds large enough that `h` does not
/// reach past them.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedFunction {
    expr: Expr,
    l_zeta: u32,
    l_u: u32,
}

impl ExtendedFunction {
    pub fn new(expr: Expr) -> Result<Self, Error> {
        let mut l_zeta = 0;
        let mut l_u = 0;
        for v in expr.variables() {
            match v.group {
                VarGroup::State if v.shift == 0 => {}
                VarGroup::Zeta if v.shift <= -1 => l_zeta = l_zeta.max(v.shift.unsigned_abs()),
                VarGroup::Input if v.shift >= 0 => l_u = l_u.max(v.shift as u32),
                _ => {
                    return Err(Error::InvalidCoordinates(format!(
                        "{v} is not an extended coordinate (allowed: z_[-b] with b >= 1, x, u_[a] with a >= 0)"
                    )))
                }
            }
        }
        Ok(ExtendedFunction { expr, l_zeta, l_u })
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn into_expr(self) -> Expr {
        self.expr
    }

    /// Backward ζ-window `l_ζ`.
    pub fn l_zeta(&self) -> u32 {
        self.l_zeta
    }

    /// Forward input window `l_u`.
    pub fn l_u(&self) -> u32 {
        self.l_u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::expr::parse;
    use crate::verify::numeric_equal;

    fn ext(sys: &DiscreteTimeSystem, s: &str) -> ExtendedFunction {
        sys.extended(parse(s).unwrap()).unwrap()
    }

    #[test]
    fn forward_shift_of_state_row() {
        let sys = corpus::product_system();
        let h = sys.forward_shift(&ext(&sys, "x3"), 1);
        assert_eq!(h.expr(), &parse("x3 + u1*u2").unwrap());
    }

    #[test]
    fn forward_shift_relabels_inputs() {
        let sys = corpus::product_system();
        let h = sys.forward_shift(&ext(&sys, "u1_[2]"), 1);
        assert_eq!(h.expr(), &parse("u1_[3]").unwrap());
        assert_eq!(h.l_u(), 3);
    }

    #[test]
    fn double_shift_of_flat_output_component() {
        let sys = corpus::product_system();
        let phi1 = ext(&sys, "z1_[-1]");
        let shifted = sys.forward_shift(&phi1, 2);
        let r = numeric_equal(shifted.expr(), &sys.f()[0], &SampleDomain::default().with_samples(50))
            .unwrap();
        assert!(r.passed, "{r}");
        assert_eq!(sys.forward_shift(&sys.forward_shift(&phi1, 1), 1), shifted);
    }

    #[test]
    fn backward_shift_reads_off_inverse() {
        let sys = corpus::product_system();
        assert_eq!(sys.backward_shift(&ext(&sys, "x1"), 1).unwrap().expr(), &parse("z1_[-1]").unwrap());
        assert_eq!(sys.backward_shift(&ext(&sys, "u1_[1]"), 1).unwrap().expr(), &parse("u1").unwrap());
    }

    #[test]
    fn backward_shift_without_inverse_fails() {
        let sys = corpus::nonflat_system();
        assert_eq!(sys.backward_shift(&ext(&sys, "x1"), 1).unwrap_err(), Error::MissingInverse);
    }

    #[test]
    fn inverse_of_product_example_is_valid() {
        let sys = corpus::product_system();
        let r = sys.check_inverse(&SampleDomain::default()).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn shift_round_trip() {
        let sys = corpus::product_system();
        let h = ext(&sys, "z2_[-2]*x3 + sin(u1_[1])*z1_[-1] + k*x2");
        let there = sys.forward_shift(&h, 1);
        let back = sys.backward_shift(&there, 1).unwrap();
        let r = numeric_equal(back.expr(), h.expr(), &SampleDomain::default()).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn submersivity() {
        let domain = SampleDomain::default();
        let r = corpus::product_system().check_submersivity(&domain);
        assert!(r.passed && r.ranks.iter().all(|s| s.rank == 3), "{r}");
        let r = corpus::nonflat_system().check_submersivity(&domain);
        assert!(r.passed && r.ranks.iter().all(|s| s.rank == 3), "{r}");
        let degenerate =
            DiscreteTimeSystem::new(alloc::vec![parse("0*x1 + 0*u1").unwrap()], alloc::vec![parse("x1").unwrap()])
                .unwrap();
        let r = degenerate.check_submersivity(&domain);
        assert!(!r.passed);
        assert!(r.ranks.iter().all(|s| s.rank == 0));
    }

    #[test]
    fn extension_regularity() {
        let r = corpus::product_system().check_extension_regularity(&SampleDomain::default());
        assert!(r.passed, "{r}");
    }

    #[test]
    fn equilibria() {
        let window = (-50, 50);
        assert!(corpus::product_system().check_equilibrium(&[0., 0., 0.], &[0., 0.], window));
        assert!(corpus::nonflat_system().check_equilibrium(&[0., 0., 0.], &[0., 0.], window));
        assert!(corpus::product_system().check_equilibrium(&[1., 0., 0.], &[0., 0.], window));
        assert!(!corpus::product_system().check_equilibrium(&[0., 0., 0.], &[1., 0.], window));
    }

    #[test]
    fn product_trajectory_has_exactly_zero_residual() {
        let sys = corpus::product_system();
        let r = sys.check_trajectory(&corpus::product_trajectory(), (-10, 10));
        assert!(r.passed, "{r}");
        assert_eq!(r.max_abs_deviation, 0.0);
        assert_eq!(r.samples, 21);
    }

    #[test]
    fn constant_trajectory_at_equilibrium() {
        let sys = corpus::nonflat_system();
        let zero = || alloc::vec![Expr::zero(); 3];
        let traj = Trajectory::closed(zero(), alloc::vec![Expr::zero(); 2]).unwrap();
        let r = sys.check_trajectory(&traj, (-5, 5));
        assert!(r.passed && r.max_abs_deviation == 0.0, "{r}");
    }

    #[test]
    fn perturbed_trajectory_fails() {
        let sys = corpus::product_system();
        let mut traj = corpus::product_trajectory();
        if let crate::trajectory::Signal::Closed(x) = &mut traj.x {
            // a constant offset on x3 is again a trajectory, a drift is not
            x[2] = x[2].add(&Expr::real(1e-3).mul(&Expr::time()));
        }
        let r = sys.check_trajectory(&traj, (-10, 10));
        assert!(!r.passed);
        assert!((r.max_abs_deviation - 1e-3).abs() < 1e-9, "{r}");
    }

    #[test]
    fn rejects_foreign_variables() {
        assert!(DiscreteTimeSystem::new(alloc::vec![parse("x1 + u1_[1]").unwrap()], alloc::vec![]).is_err());
        assert!(DiscreteTimeSystem::new(alloc::vec![parse("x2").unwrap()], alloc::vec![]).is_err());
        assert!(ExtendedFunction::new(parse("z1").unwrap()).is_err());
        assert!(ExtendedFunction::new(parse("dx1").unwrap()).is_err());
    }
}
