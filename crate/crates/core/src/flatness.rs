//! Flat outputs, their parameterizations, and the numeric checks of the
//! defining identities.

use alloc::format;
use alloc::vec::Vec;

use crate::expr::{Expr, Substitution, VarGroup, VarRef};
use crate::linalg::SymbolicJacobian;
use crate::system::{DiscreteTimeSystem, ExtendedFunction};
use crate::trajectory::{Signal, TimeFunction, Trajectory};
use crate::verify::{numeric_equal_all, sampled_rank_check, Exclusion, SampleDomain, VerificationReport};
use crate::Error;

/// `δ_y`: the relabeling `k → k+1`, `y_[α] → y_[α+1]`, applied `times`
/// times. Negative `times` shifts backwards.
pub fn shift_y(e: &Expr, times: i32) -> Expr {
    if times == 0 {
        return e.clone();
    }
    let t = crate::expr::time_plus(i64::from(times));
    e.rewrite(
        &|v| (v.group == VarGroup::FlatOut).then(|| Expr::var(v.shifted(times))),
        Some(&t),
    )
}

/// A flat-output candidate `y = φ(k, ζ_[-q1..-1], x, u_[0..q2])`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatOutputCandidate {
    phi: Vec<ExtendedFunction>,
    q1: u32,
    q2: u32,
}

impl FlatOutputCandidate {
    pub fn new(phi: Vec<ExtendedFunction>) -> Self {
        let q1 = phi.iter().map(ExtendedFunction::l_zeta).max().unwrap_or(0);
        let q2 = phi.iter().map(ExtendedFunction::l_u).max().unwrap_or(0);
        FlatOutputCandidate { phi, q1, q2 }
    }

    pub fn phi(&self) -> &[ExtendedFunction] {
        &self.phi
    }

    pub fn exprs(&self) -> Vec<Expr> {
        self.phi.iter().map(|p| p.expr().clone()).collect()
    }

    /// Deepest backward ζ-shift referenced.
    pub fn q1(&self) -> u32 {
        self.q1
    }

    /// Highest forward input shift referenced.
    pub fn q2(&self) -> u32 {
        self.q2
    }
}

/// `x = F_x(k, y_[0..R-1])`, `u = F_u(k, y_[0..R])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameterization {
    r: Vec<u32>,
    fx: Vec<Expr>,
    fu: Vec<Expr>,
}

impl Parameterization {
    pub fn new(r: Vec<u32>, fx: Vec<Expr>, fu: Vec<Expr>) -> Result<Self, Error> {
        let m = r.len();
        if fu.len() != m {
            return Err(Error::InvalidParameterization(format!(
                "R has {m} entries but F_u has {}",
                fu.len()
            )));
        }
        for (label, exprs, top) in [("x", &fx, 1u32), ("u", &fu, 0u32)] {
            for (i, e) in exprs.iter().enumerate() {
                for v in e.variables() {
                    let name = format!("param.{label}.{}", i + 1);
                    if v.group != VarGroup::FlatOut {
                        return Err(Error::InvalidParameterization(format!(
                            "{name} references {v}; only y-variables are allowed"
                        )));
                    }
                    let j = v.index as usize;
                    if j > m {
                        return Err(Error::InvalidParameterization(format!(
                            "{name} references {v} but there are only {m} flat outputs"
                        )));
                    }
                    if v.shift < 0 {
                        return Err(Error::InvalidParameterization(format!(
                            "{name} references the backward shift {v}; replace each flat output \
                             component by its highest backward shift so that only forward shifts remain"
                        )));
                    }
                    let limit = i64::from(r[j - 1]) - i64::from(top);
                    if i64::from(v.shift) > limit {
                        return Err(Error::InvalidParameterization(if top == 1 {
                            format!("{name} references {v}; F_x must not depend on y_[R]")
                        } else {
                            format!("{name} references {v} beyond R")
                        }));
                    }
                }
            }
        }
        Ok(Parameterization { r, fx, fu })
    }

    pub fn r_index(&self) -> &[u32] {
        &self.r
    }

    /// `r = max(R)`.
    pub fn r(&self) -> u32 {
        self.r.iter().copied().max().unwrap_or(0)
    }

    pub fn n(&self) -> usize {
        self.fx.len()
    }

    pub fn m(&self) -> usize {
        self.r.len()
    }

    pub fn fx(&self) -> &[Expr] {
        &self.fx
    }

    pub fn fu(&self) -> &[Expr] {
        &self.fu
    }

    /// `y_j_[α]` for `α ∈ [0, r_j - drop]`, component by component.
    pub fn jet_vars(&self, drop: u32) -> Vec<VarRef> {
        let mut out = Vec::new();
        for (j, &r) in self.r.iter().enumerate() {
            if r >= drop {
                for a in 0..=(r - drop) {
                    out.push(VarRef::y(j as u32 + 1, a as i32));
                }
            }
        }
        out
    }
}

/// A flat-output candidate with its parameterization and the singular
/// locus to avoid, given as exclusions over y-jets.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatPair {
    candidate: FlatOutputCandidate,
    param: Parameterization,
    exclusions: Vec<Exclusion>,
}

impl FlatPair {
    /// Each exclusion is extended by its `δ_y`-shifts that still fit into
    /// the jet `y_[0..R]`, since shifted parameterization entries carry
    /// shifted denominators.
    pub fn new(
        sys: &DiscreteTimeSystem,
        candidate: FlatOutputCandidate,
        param: Parameterization,
        exclusions: Vec<Exclusion>,
    ) -> Result<Self, Error> {
        let m = sys.m();
        if candidate.phi.len() != m || param.m() != m || param.n() != sys.n() {
            return Err(Error::InvalidParameterization(format!(
                "dimensions do not match the system: phi has {}, R has {}, F_x has {} (n = {}, m = {m})",
                candidate.phi.len(),
                param.m(),
                param.n(),
                sys.n()
            )));
        }
        for p in &candidate.phi {
            sys.extended(p.expr().clone())?;
        }
        let fits = |e: &Expr| {
            e.variables().iter().all(|v| {
                v.group == VarGroup::FlatOut
                    && v.shift >= 0
                    && (v.index as usize) <= m
                    && v.shift as u32 <= param.r[v.index as usize - 1]
            })
        };
        let mut expanded = Vec::new();
        for ex in exclusions {
            if !fits(&ex.expr) {
                return Err(Error::InvalidParameterization(format!(
                    "exclusion {} must be written in y_[0..R]",
                    ex.expr
                )));
            }
            let mut e = ex.expr.clone();
            while fits(&e) {
                expanded.push(Exclusion::new(e.clone(), ex.bound));
                e = shift_y(&e, 1);
                if e.variables().is_empty() {
                    break;
                }
            }
        }
        Ok(FlatPair { candidate, param, exclusions: expanded })
    }

    pub fn candidate(&self) -> &FlatOutputCandidate {
        &self.candidate
    }

    pub fn param(&self) -> &Parameterization {
        &self.param
    }

    /// Exclusions over y-jets, including their shifts.
    pub fn exclusions(&self) -> &[Exclusion] {
        &self.exclusions
    }

    /// `domain` restricted to non-singular y-jets.
    pub fn jet_domain(&self, domain: &SampleDomain) -> SampleDomain {
        let mut d = domain.clone();
        d.exclusions.extend(self.exclusions.iter().cloned());
        d
    }

    /// `y_j_[α] ↦ δ^α(φ^j)` for `α ≤ r_j`.
    pub fn jet_substitution(&self, sys: &DiscreteTimeSystem) -> Substitution {
        let mut subs = Substitution::new();
        for (j, phi) in self.candidate.phi.iter().enumerate() {
            let mut e = phi.expr().clone();
            for a in 0..=self.param.r[j] {
                subs.insert(VarRef::y(j as u32 + 1, a as i32), e.clone());
                e = sys.forward_shift_expr(&e);
            }
        }
        subs
    }
}

/// `δ_y(F_x) = f(k, F_x, F_u)` at random y-jets.
pub fn verify_parameterization_identity(
    sys: &DiscreteTimeSystem,
    param: &Parameterization,
    domain: &SampleDomain,
) -> Result<VerificationReport, Error> {
    let mut subs = Substitution::new();
    for (i, e) in param.fx.iter().enumerate() {
        subs.insert(VarRef::x(i as u32 + 1), e.clone());
    }
    for (j, e) in param.fu.iter().enumerate() {
        subs.insert(VarRef::u(j as u32 + 1, 0), e.clone());
    }
    let lhs: Vec<Expr> = param.fx.iter().map(|e| shift_y(e, 1)).collect();
    let rhs: Vec<Expr> = sys.f().iter().map(|f| f.substitute(&subs)).collect();
    numeric_equal_all("parameterization_identity", &lhs, &rhs, domain)
}

/// `x = F_x(φ, …, δ^(R-1)φ)` and `u = F_u(φ, …, δ^R φ)` on the extended
/// coordinates. The pair's exclusions are pulled back through the same
/// substitution.
pub fn verify_flat_pair(
    sys: &DiscreteTimeSystem,
    pair: &FlatPair,
    domain: &SampleDomain,
) -> Result<VerificationReport, Error> {
    let subs = pair.jet_substitution(sys);
    let lhs: Vec<Expr> = pair.param.fx.iter().chain(&pair.param.fu).map(|e| e.substitute(&subs)).collect();
    let rhs: Vec<Expr> = sys.point_vars().into_iter().map(Expr::var).collect();
    let mut d = domain.clone();
    d.exclusions
        .extend(pair.exclusions.iter().map(|ex| Exclusion::new(ex.expr.substitute(&subs), ex.bound)));
    numeric_equal_all("flat_pair", &lhs, &rhs, &d)
}

/// Ranks `n + m` of `∂(F_x, F_u)/∂(y, …, y_[R])` and `n` of
/// `∂F_x/∂(y, …, y_[R-1])`.
pub fn check_rank_conditions(param: &Parameterization, domain: &SampleDomain) -> VerificationReport {
    let mut all = param.fx.clone();
    all.extend(param.fu.iter().cloned());
    let full = SymbolicJacobian::new(&all, &param.jet_vars(0));
    let state = SymbolicJacobian::new(&param.fx, &param.jet_vars(1));
    let (n, m) = (param.n(), param.m());
    sampled_rank_check("rank_conditions", &[("d(F_x,F_u)", &full, n + m), ("dF_x", &state, n)], domain)
}

/// `y(k) = φ(k, ζ(k-q1..k-1), x(k), u(k..k+q2))`. Closed-form when the
/// trajectory is, otherwise tabulated on the part of `window` where every
/// component is available.
pub fn flat_output_trajectory(
    sys: &DiscreteTimeSystem,
    pair: &FlatPair,
    traj: &Trajectory,
    window: (i64, i64),
) -> Result<Signal, Error> {
    let parts = traj.along_all(sys, &pair.candidate.exprs(), window)?;
    if parts.iter().all(|p| matches!(p, TimeFunction::Symbolic(_))) {
        return Ok(Signal::Closed(
            parts.into_iter().filter_map(|p| p.as_expr().cloned()).collect(),
        ));
    }
    let mut lo = window.0;
    let mut hi = window.1;
    for p in &parts {
        if let Some((a, b)) = p.window() {
            lo = lo.max(a);
            hi = hi.min(b);
        }
    }
    if lo > hi {
        return Err(Error::TrajectoryUnavailable { k: window.0 });
    }
    let rows = (lo..=hi)
        .map(|k| parts.iter().map(|p| p.at(k)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Signal::Tabulated { k0: lo, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::expr::{parse, Exact};

    fn domain() -> SampleDomain {
        SampleDomain::default()
    }

    #[test]
    fn shift_y_relabels() {
        let e = parse("k*y1 + y2_[2]").unwrap();
        assert_eq!(shift_y(&e, 1), parse("(k + 1)*y1_[1] + y2_[3]").unwrap());
        assert_eq!(shift_y(&shift_y(&e, 2), -2), parse("(k - 2 + 2)*y1 + y2_[2]").unwrap());
    }

    #[test]
    fn candidate_windows() {
        let pair = corpus::product_pair();
        assert_eq!(pair.candidate().q1(), 1);
        assert_eq!(pair.candidate().q2(), 0);
        assert_eq!(pair.param().r(), 3);
        assert_eq!(pair.param().r_index(), &[3, 2]);
    }

    #[test]
    fn exclusions_are_expanded_by_shifts() {
        let pair = corpus::product_pair();
        let exprs: Vec<_> = pair.exclusions().iter().map(|e| e.expr.clone()).collect();
        assert_eq!(exprs.len(), 2);
        assert_eq!(exprs[1], shift_y(&exprs[0], 1));
    }

    #[test]
    fn product_parameterization_identity() {
        let pair = corpus::product_pair();
        let r = verify_parameterization_identity(&corpus::product_system(), pair.param(), &pair.jet_domain(&domain()))
            .unwrap();
        assert!(r.passed, "{r}");
        assert_eq!(r.samples, 100);
    }

    #[test]
    fn integrator_identities_are_exact() {
        let sys = corpus::integrator_system();
        let pair = corpus::integrator_pair();
        let r = verify_parameterization_identity(&sys, pair.param(), &domain()).unwrap();
        assert!(r.passed && r.max_abs_deviation == 0.0, "{r}");
        let r = verify_flat_pair(&sys, &pair, &domain()).unwrap();
        assert!(r.passed && r.max_abs_deviation == 0.0, "{r}");
    }

    #[test]
    fn broken_parameterization_fails() {
        let sys = corpus::product_system();
        let pair = corpus::product_pair_broken();
        let r = verify_parameterization_identity(&sys, pair.param(), &pair.jet_domain(&domain())).unwrap();
        assert!(!r.passed);
        assert!(r.max_abs_deviation > 1e-1, "{r}");
    }

    #[test]
    fn product_flat_pair() {
        let sys = corpus::product_system();
        let pair = corpus::product_pair();
        let r = verify_flat_pair(&sys, &pair, &domain().with_tolerance(1e-8)).unwrap();
        assert!(r.passed, "{r}");
        assert_eq!(r.samples, 100);
    }

    #[test]
    fn misaligned_shift_fails() {
        let sys = corpus::product_system();
        let pair = corpus::product_pair();
        let p = pair.param();
        // u1 written one shift too low: y1_[1] - y1 instead of y1_[2] - y1_[1]
        let mut fu = p.fu().to_vec();
        fu[0] = shift_y(&fu[0], -1);
        let param = Parameterization::new(p.r_index().to_vec(), p.fx().to_vec(), fu).unwrap();
        let bad = FlatPair::new(&sys, pair.candidate().clone(), param, pair.exclusions()[..1].to_vec()).unwrap();
        let r = verify_flat_pair(&sys, &bad, &domain()).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn rank_conditions() {
        let pair = corpus::product_pair();
        let r = check_rank_conditions(pair.param(), &pair.jet_domain(&domain()));
        assert!(r.passed, "{r}");
        assert!(r.ranks.iter().any(|s| s.rank == 5));
        assert!(r.ranks.iter().any(|s| s.rank == 3));

        let r = check_rank_conditions(corpus::integrator_pair().param(), &domain());
        assert!(r.passed, "{r}");
        let first = &r.ranks[0].singular_values;
        assert!(r.ranks.iter().filter(|s| s.expected == 2).all(|s| &s.singular_values == first));
    }

    #[test]
    fn duplicated_state_row_is_rank_deficient() {
        let pair = corpus::product_pair();
        let p = pair.param();
        let mut fx = p.fx().to_vec();
        fx[1] = fx[0].clone();
        let bad = Parameterization::new(p.r_index().to_vec(), fx, p.fu().to_vec()).unwrap();
        let r = check_rank_conditions(&bad, &pair.jet_domain(&domain()));
        assert!(!r.passed);
        assert!(r.ranks.iter().any(|s| s.expected == 3 && s.rank == 2));
    }

    #[test]
    fn parameterization_validation() {
        let y = |s: &str| parse(s).unwrap();
        let neg = Parameterization::new(alloc::vec![1], alloc::vec![y("y1_[-1]")], alloc::vec![y("y1")]);
        assert!(matches!(neg, Err(Error::InvalidParameterization(msg)) if msg.contains("backward shift")));
        let top = Parameterization::new(alloc::vec![1], alloc::vec![y("y1_[1]")], alloc::vec![y("y1")]);
        assert!(matches!(top, Err(Error::InvalidParameterization(msg)) if msg.contains("y_[R]")));
        let foreign = Parameterization::new(alloc::vec![1], alloc::vec![y("x1")], alloc::vec![y("y1")]);
        assert!(foreign.is_err());
    }

    #[test]
    fn product_flat_output_trajectory() {
        let sys = corpus::product_system();
        let y = flat_output_trajectory(&sys, &corpus::product_pair(), &corpus::product_trajectory(), (-10, 10))
            .unwrap();
        for k in -10i64..=10 {
            let got = y.exact_at(k).unwrap();
            let k = i128::from(k);
            assert_eq!(got[0], Exact::new((k - 1) * (k - 2), 2));
            assert_eq!(got[1], Exact::new(k * (k - 1) * (k - 2), 6));
        }
    }

    #[test]
    fn equilibrium_flat_output_is_zero() {
        let sys = corpus::product_system();
        let traj = Trajectory::closed(alloc::vec![Expr::zero(); 3], alloc::vec![Expr::zero(); 2]).unwrap();
        let y = flat_output_trajectory(&sys, &corpus::product_pair(), &traj, (-3, 3)).unwrap();
        for k in -3..=3 {
            assert_eq!(y.at(k).unwrap(), alloc::vec![0.0, 0.0]);
        }
    }

    #[test]
    fn tabulated_flat_output_matches_closed_form() {
        let sys = corpus::product_system();
        let closed = corpus::product_trajectory();
        let tab = Trajectory::new(closed.x.tabulate(-5, 5).unwrap(), closed.u.tabulate(-5, 5).unwrap());
        let pair = corpus::product_pair();
        let a = flat_output_trajectory(&sys, &pair, &closed, (-5, 5)).unwrap();
        let b = flat_output_trajectory(&sys, &pair, &tab, (-5, 5)).unwrap();
        assert_eq!(b.window(), Some((-4, 5)));
        for k in -4..=5 {
            assert_eq!(a.at(k).unwrap(), b.at(k).unwrap());
        }
    }
}
