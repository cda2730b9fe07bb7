//! Linearization along trajectories.
//!
//! Functions are first linearized in placeholder form: the result of
//! [`lie_linearize`] lives on the doubled coordinates (extended coordinates
//! plus their Δ-variations) and is linear in the Δ-variables. A trajectory is
//! inserted only at the end, which turns coefficients into functions of `k`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::expr::{Binding, Expr, Node, Substitution, VarGroup, VarRef};
use crate::flatness::{flat_output_trajectory, FlatPair};
use crate::linalg::{numeric_rank, Matrix};
use crate::system::{DiscreteTimeSystem, ExtendedFunction};
use crate::trajectory::{Signal, TimeFunction, Trajectory};
use crate::verify::{numeric_equal_all, SampleDomain, VerificationReport};
use crate::Error;

/// A function on the doubled coordinates, linear in the Δ-variables.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaExtendedFunction(Expr);

impl DeltaExtendedFunction {
    pub fn new(expr: Expr) -> Result<Self, Error> {
        if !is_delta_linear(&expr) {
            return Err(Error::InvalidCoordinates(format!("{expr} is not linear in the Δ-variables")));
        }
        Ok(DeltaExtendedFunction(expr))
    }

    pub fn expr(&self) -> &Expr {
        &self.0
    }

    pub fn into_expr(self) -> Expr {
        self.0
    }
}

/// Degree at most one in the Δ-variables, decided on the syntax tree.
pub fn is_delta_linear(e: &Expr) -> bool {
    e.degree_in(&|v: &VarRef| v.is_delta()).is_some_and(|d| d <= 1)
}

fn is_extended(v: &VarRef) -> bool {
    matches!(v.group, VarGroup::State | VarGroup::Input | VarGroup::Zeta)
}

/// `L_{v_lin}(h) = Σ ∂h/∂v · Δv` over every extended coordinate `v` of `h`.
pub fn lie_linearize(h: &ExtendedFunction) -> DeltaExtendedFunction {
    DeltaExtendedFunction(lie_linearize_expr(h.expr()))
}

fn lie_linearize_expr(h: &Expr) -> Expr {
    Expr::sum(
        h.variables()
            .into_iter()
            .filter(is_extended)
            .map(|v| h.differentiate(v).mul(&Expr::var(v.delta()))),
    )
}

/// `∂h/∂(x, u) · (Δx, Δu)` for a function of `(k, x, u)`.
fn jacobian_form(sys: &DiscreteTimeSystem, h: &Expr) -> Expr {
    Expr::sum(
        sys.point_vars()
            .into_iter()
            .map(|v| h.differentiate(v).mul(&Expr::var(v.delta()))),
    )
}

/// The shift operator on the doubled coordinates.
#[derive(Clone, Debug)]
pub struct DeltaLin<'a> {
    sys: &'a DiscreteTimeSystem,
    dx: Vec<Expr>,
    dzeta: Vec<Expr>,
}

impl<'a> DeltaLin<'a> {
    pub fn new(sys: &'a DiscreteTimeSystem) -> Self {
        DeltaLin {
            sys,
            dx: sys.f().iter().map(|f| jacobian_form(sys, f)).collect(),
            dzeta: sys.g().iter().map(|g| jacobian_form(sys, g)).collect(),
        }
    }

    /// One application of the rule to an arbitrary expression.
    pub fn shift_expr(&self, e: &Expr) -> Expr {
        let t = Expr::time().add(&Expr::one());
        let sys = self.sys;
        e.rewrite(
            &|v| {
                let i = v.index as usize - 1;
                match v.group {
                    VarGroup::State => Some(sys.f()[i].clone()),
                    VarGroup::Zeta if v.shift == -1 => Some(sys.g()[i].clone()),
                    VarGroup::Zeta | VarGroup::Input => Some(Expr::var(v.shifted(1))),
                    VarGroup::DeltaState => Some(self.dx[i].clone()),
                    VarGroup::DeltaZeta if v.shift == -1 => Some(self.dzeta[i].clone()),
                    VarGroup::DeltaZeta | VarGroup::DeltaInput => Some(Expr::var(v.shifted(1))),
                    _ => None,
                }
            },
            Some(&t),
        )
    }

    pub fn shift(&self, h: &DeltaExtendedFunction, times: u32) -> DeltaExtendedFunction {
        let mut e = h.0.clone();
        for _ in 0..times {
            e = self.shift_expr(&e);
        }
        DeltaExtendedFunction(e)
    }
}

/// `δ_lin^times(h)`.
pub fn delta_lin_shift(sys: &DiscreteTimeSystem, h: &DeltaExtendedFunction, times: u32) -> DeltaExtendedFunction {
    DeltaLin::new(sys).shift(h, times)
}

/// Default depth of the iterated commutation check.
pub const COMMUTATION_DEPTH: u32 = 4;

/// `L(δ^α h) = δ_lin^α(L(h))` for `α = 1..=depth` at random points of the
/// doubled coordinates. Both sides are also checked to be Δ-linear.
pub fn check_commutation(
    sys: &DiscreteTimeSystem,
    h: &ExtendedFunction,
    depth: u32,
    domain: &SampleDomain,
) -> Result<VerificationReport, Error> {
    let delta_lin = DeltaLin::new(sys);
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    let mut shifted = h.expr().clone();
    let mut linear = lie_linearize_expr(h.expr());
    for _ in 0..depth {
        shifted = sys.forward_shift_expr(&shifted);
        linear = delta_lin.shift_expr(&linear);
        lhs.push(lie_linearize_expr(&shifted));
        rhs.push(linear.clone());
    }
    let mut report = numeric_equal_all("commutation", &lhs, &rhs, domain)?;
    for (a, e) in lhs.iter().chain(&rhs).enumerate() {
        if !is_delta_linear(e) {
            report.fail(format!("expression {} is not linear in the Δ-variables", a + 1));
        }
    }
    report.notes.push(format!("h = {}, depth {depth}", h.expr()));
    Ok(report)
}

/// `Δx⁺ = A(k)Δx + B(k)Δu` with `Δζ = dzeta(k)(Δx, Δu)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LTVSystem {
    pub n: usize,
    pub m: usize,
    pub a: Vec<Vec<TimeFunction>>,
    pub b: Vec<Vec<TimeFunction>>,
    /// `∂g/∂(x, u)` along the trajectory, `m × (n+m)`.
    pub dzeta: Vec<Vec<TimeFunction>>,
    pub source: String,
}

fn matrix_at(rows: &[Vec<TimeFunction>], ncols: usize, k: i64) -> Result<Matrix, Error> {
    let mut m = Matrix::zeros(rows.len(), ncols);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            m[(i, j)] = e.at(k)?;
        }
    }
    Ok(m)
}

impl LTVSystem {
    /// Constant-coefficient system.
    pub fn from_constant(a: &Matrix, b: &Matrix) -> Self {
        let tf = |v: f64| TimeFunction::Symbolic(Expr::real(v));
        let rows = |m: &Matrix| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| tf(m[(i, j)])).collect()).collect();
        LTVSystem { n: a.nrows(), m: b.ncols(), a: rows(a), b: rows(b), dzeta: Vec::new(), source: "constant".into() }
    }

    pub fn a_at(&self, k: i64) -> Result<Matrix, Error> {
        matrix_at(&self.a, self.n, k)
    }

    pub fn b_at(&self, k: i64) -> Result<Matrix, Error> {
        matrix_at(&self.b, self.m, k)
    }

    pub fn dzeta_at(&self, k: i64) -> Result<Matrix, Error> {
        matrix_at(&self.dzeta, self.n + self.m, k)
    }

    /// True when every coefficient is a closed-form expression in `k`.
    pub fn is_closed(&self) -> bool {
        self.a.iter().chain(&self.b).chain(&self.dzeta).flatten().all(|e| e.as_expr().is_some())
    }

    /// Window on which sampled coefficients are defined; `None` when all are
    /// closed-form.
    pub fn window(&self) -> Option<(i64, i64)> {
        self.a
            .iter()
            .chain(&self.b)
            .chain(&self.dzeta)
            .flatten()
            .filter_map(TimeFunction::window)
            .reduce(|(a, b), (c, d)| (a.max(c), b.min(d)))
    }

    /// Regularity of `[A B; dzeta]` on `[lo, hi]`.
    pub fn check_regularity(&self, (lo, hi): (i64, i64)) -> VerificationReport {
        let mut report = VerificationReport::new("ltv_regularity", 0.0);
        for k in lo..=hi {
            let stacked = (|| -> Result<Matrix, Error> {
                let (a, b, dz) = (self.a_at(k)?, self.b_at(k)?, self.dzeta_at(k)?);
                let size = self.n + self.m;
                let mut s = Matrix::zeros(size, size);
                s.view_mut((0, 0), (self.n, self.n)).copy_from(&a);
                s.view_mut((0, self.n), (self.n, self.m)).copy_from(&b);
                s.view_mut((self.n, 0), (self.m, size)).copy_from(&dz);
                Ok(s)
            })();
            match stacked {
                Ok(s) => {
                    report.samples += 1;
                    let rank = numeric_rank(&s);
                    if rank != self.n + self.m {
                        report.fail(format!("rank {rank} at k={k}"));
                    }
                }
                Err(_) => report.skipped += 1,
            }
        }
        if report.samples == 0 {
            report.passed = false;
        }
        report
    }
}

/// `A = ∂_x f`, `B = ∂_u f`, `dzeta = ∂_(x,u) g` along the trajectory.
/// Closed-form in `k` for closed-form trajectories; otherwise sampled on
/// the part of `window` where `x(k)` and `u(k)` are available.
pub fn linearize_along(sys: &DiscreteTimeSystem, traj: &Trajectory, window: (i64, i64)) -> Result<LTVSystem, Error> {
    let xs = sys.state_vars();
    let us = sys.input_vars();
    let pv = sys.point_vars();
    let along = |funcs: &[Expr], vars: &[VarRef]| -> Result<Vec<Vec<TimeFunction>>, Error> {
        funcs
            .iter()
            .map(|f| vars.iter().map(|v| traj.along(sys, &f.differentiate(*v), window)).collect())
            .collect()
    };
    Ok(LTVSystem {
        n: sys.n(),
        m: sys.m(),
        a: along(sys.f(), &xs)?,
        b: along(sys.f(), &us)?,
        dzeta: along(sys.g(), &pv)?,
        source: String::from(if traj.is_closed() {
            "closed-form trajectory"
        } else {
            "tabulated trajectory"
        }),
    })
}

/// `Σ c_v(k) Δv` over Δ-variables `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearForm {
    pub terms: Vec<(VarRef, TimeFunction)>,
}

impl LinearForm {
    pub fn coefficient(&self, v: VarRef) -> Option<&TimeFunction> {
        self.terms.iter().find(|(w, _)| *w == v).map(|(_, c)| c)
    }

    pub fn vars(&self) -> impl Iterator<Item = VarRef> + '_ {
        self.terms.iter().map(|(v, _)| *v)
    }

    pub fn coefficients_at(&self, k: i64) -> Result<BTreeMap<VarRef, f64>, Error> {
        self.terms.iter().map(|(v, c)| Ok((*v, c.at(k)?))).collect()
    }

    /// `Σ c_v(k) b[v shifted by `shift`]`.
    pub fn evaluate_shifted(&self, k: i64, b: &Binding, shift: i32) -> Result<f64, Error> {
        let mut sum = 0.0;
        for (v, c) in &self.terms {
            let w = v.shifted(shift);
            sum += c.at(k)? * b.get(&w).ok_or(Error::MissingVariable(w))?;
        }
        Ok(sum)
    }

    pub fn evaluate(&self, k: i64, b: &Binding) -> Result<f64, Error> {
        self.evaluate_shifted(k, b, 0)
    }

    /// The form as an expression in `k` and the Δ-variables, when every
    /// coefficient is closed-form.
    pub fn to_expr(&self) -> Option<Expr> {
        let mut terms = Vec::new();
        for (v, c) in &self.terms {
            terms.push(c.as_expr()?.mul(&Expr::var(*v)));
        }
        Some(Expr::sum(terms))
    }
}

/// `(negative, |c|)` for a coefficient printed in a sum.
fn split_sign(c: &Expr) -> (bool, Expr) {
    match c.node() {
        Node::Neg(a) => (true, a.clone()),
        Node::Integer(i) if *i < 0 => (true, c.neg()),
        Node::Rational(r) if *r.numer() < 0 => (true, c.neg()),
        Node::Sub(a, b) => match a.node() {
            Node::Neg(a) => (true, a.add(b)),
            _ => (false, c.clone()),
        },
        Node::Mul(a, b) | Node::Div(a, b) => match split_sign(a) {
            (true, m) => (true, if matches!(c.node(), Node::Mul(..)) { m.mul(b) } else { m.div(b) }),
            _ => (false, c.clone()),
        },
        _ => (false, c.clone()),
    }
}

/// Closed-form coefficients are printed in expanded rational form.
impl fmt::Display for LinearForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (v, c)) in self.terms.iter().enumerate() {
            let (negative, magnitude) = match c.as_expr() {
                Some(e) => {
                    let (neg, m) = split_sign(&e.simplified_in_k());
                    (neg, Some(m))
                }
                None => (false, None),
            };
            match (i, negative) {
                (0, true) => f.write_str("-")?,
                (0, false) => {}
                (_, true) => f.write_str(" - ")?,
                (_, false) => f.write_str(" + ")?,
            }
            match magnitude {
                Some(m) if m.is_one() => write!(f, "{v}")?,
                Some(m) if matches!(m.node(), Node::Add(..) | Node::Sub(..)) => write!(f, "({m})*{v}")?,
                Some(m) => write!(f, "{m}*{v}")?,
                None => write!(f, "c[{v}](k)*{v}")?,
            }
        }
        Ok(())
    }
}

/// Splits a Δ-linear expression into coefficients of its Δ-variables and
/// evaluates them with `coefficient`.
fn linear_form(
    e: &Expr,
    mut coefficient: impl FnMut(&Expr) -> Result<TimeFunction, Error>,
) -> Result<LinearForm, Error> {
    let mut terms = Vec::new();
    for v in e.variables().into_iter().filter(|v| v.is_delta()) {
        let c = e.differentiate(v);
        if !c.is_zero() {
            terms.push((v, coefficient(&c)?));
        }
    }
    Ok(LinearForm { terms })
}

/// `Δy = L(φ)` along a trajectory, one form per component.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFlatOutput {
    pub components: Vec<LinearForm>,
}

/// `Δx = ΔF_x(k, Δy_[0..R-1])`, `Δu = ΔF_u(k, Δy_[0..R])`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParameterization {
    pub r: Vec<u32>,
    pub x: Vec<LinearForm>,
    pub u: Vec<LinearForm>,
}

/// Evaluates a function of `(k, y-jet)` along a flat-output trajectory.
fn along_flat_output(y: &Signal, e: &Expr, (lo, hi): (i64, i64)) -> Result<TimeFunction, Error> {
    if let Signal::Closed(ys) = y {
        let mut subs = Substitution::new();
        for v in e.variables() {
            if v.group == VarGroup::FlatOut {
                subs.insert(v, ys[v.index as usize - 1].shift_time(i64::from(v.shift)));
            }
        }
        return Ok(TimeFunction::Symbolic(e.substitute(&subs)));
    }
    let vars: BTreeSet<VarRef> = e.variables();
    let mut k0 = None;
    let mut values = Vec::new();
    for k in lo..=hi {
        let mut b = Binding::new(k);
        let mut available = true;
        for v in &vars {
            match y.component(v.index as usize - 1, k + i64::from(v.shift)) {
                Ok(val) => b.set(*v, val),
                Err(_) => available = false,
            }
        }
        if !available {
            if k0.is_some() {
                break;
            }
            continue;
        }
        k0.get_or_insert(k);
        values.push(e.evaluate(&b).map_err(|_| Error::SingularTrajectory { k })?);
    }
    let k0 = k0.ok_or(Error::TrajectoryUnavailable { k: lo })?;
    Ok(TimeFunction::Sampled { k0, values })
}

/// `Δy = L(φ)|_traj` and the coefficients `∂F/∂y_[α]` along the
/// flat-output trajectory. Fails with [`Error::SingularTrajectory`] when an
/// exclusion of the pair is violated along the trajectory on `window`.
pub fn linearize_flat_pair(
    sys: &DiscreteTimeSystem,
    pair: &FlatPair,
    traj: &Trajectory,
    window: (i64, i64),
) -> Result<(LinearFlatOutput, LinearParameterization), Error> {
    let components = pair
        .candidate()
        .phi()
        .iter()
        .map(|phi| linear_form(lie_linearize(phi).expr(), |c| traj.along(sys, c, window)))
        .collect::<Result<Vec<_>, _>>()?;
    let reach = i64::from(pair.param().r());
    let y = flat_output_trajectory(sys, pair, traj, (window.0, window.1 + reach))?;
    for ex in pair.exclusions() {
        let values = along_flat_output(&y, &ex.expr, window)?;
        let (lo, hi) = values.window().unwrap_or(window);
        for k in lo..=hi {
            match values.at(k) {
                Ok(v) if v.abs() > ex.bound => {}
                _ => return Err(Error::SingularTrajectory { k }),
            }
        }
    }
    let lin = |f: &Expr| -> Result<LinearForm, Error> {
        let placeholder = Expr::sum(
            f.variables()
                .into_iter()
                .filter(|v| v.group == VarGroup::FlatOut)
                .map(|v| f.differentiate(v).mul(&Expr::var(v.delta()))),
        );
        let mut form = linear_form(&placeholder, |c| along_flat_output(&y, c, window))?;
        form.terms.sort_by_key(|(v, _)| *v);
        Ok(form)
    };
    let param = pair.param();
    let x = param.fx().iter().map(&lin).collect::<Result<Vec<_>, _>>()?;
    let u = param.fu().iter().map(&lin).collect::<Result<Vec<_>, _>>()?;
    Ok((
        LinearFlatOutput { components },
        LinearParameterization { r: param.r_index().to_vec(), x, u },
    ))
}

/// Both halves of the linear flat-pair check.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPairReport {
    /// `ΔF_x(k+1, Δy_[1..R]) = A(k) ΔF_x + B(k) ΔF_u`.
    pub dynamics: VerificationReport,
    /// `ΔF(δ_lin^α Δy) = (Δx, Δu)`.
    pub round_trip: VerificationReport,
}

impl LinearPairReport {
    pub fn passed(&self) -> bool {
        self.dynamics.passed && self.round_trip.passed
    }
}

/// One step of `δ_lin` on numeric coefficients: `coeffs` belong to a form
/// at time `k+1`; the result is the same form expressed at time `k`.
fn shift_coefficients(ltv: &LTVSystem, coeffs: &BTreeMap<VarRef, f64>, k: i64) -> Result<BTreeMap<VarRef, f64>, Error> {
    let mut out = BTreeMap::new();
    let mut add = |v: VarRef, c: f64| *out.entry(v).or_insert(0.0) += c;
    let (a, b) = (ltv.a_at(k)?, ltv.b_at(k)?);
    let dzeta = if coeffs.keys().any(|v| v.group == VarGroup::DeltaZeta && v.shift == -1) {
        Some(ltv.dzeta_at(k)?)
    } else {
        None
    };
    let dx = |s: usize| VarRef::new(VarGroup::DeltaState, s as u32 + 1, 0);
    let du = |l: usize| VarRef::new(VarGroup::DeltaInput, l as u32 + 1, 0);
    for (&v, &c) in coeffs {
        let i = v.index as usize - 1;
        match v.group {
            VarGroup::DeltaState => {
                for s in 0..ltv.n {
                    add(dx(s), c * a[(i, s)]);
                }
                for l in 0..ltv.m {
                    add(du(l), c * b[(i, l)]);
                }
            }
            VarGroup::DeltaZeta if v.shift == -1 => {
                let dz = dzeta.as_ref().ok_or(Error::MissingVariable(v))?;
                for s in 0..ltv.n {
                    add(dx(s), c * dz[(i, s)]);
                }
                for l in 0..ltv.m {
                    add(du(l), c * dz[(i, ltv.n + l)]);
                }
            }
            _ => add(v.shifted(1), c),
        }
    }
    Ok(out)
}

/// `δ_lin^α(Δy^j)` at time `k` as numeric coefficients, `α ≤ depth`.
fn shifted_flat_output(
    ltv: &LTVSystem,
    form: &LinearForm,
    depth: u32,
    k: i64,
) -> Result<Vec<BTreeMap<VarRef, f64>>, Error> {
    let mut out = Vec::new();
    for alpha in 0..=depth {
        // δ^α at k is δ applied α times, innermost at k + α - 1.
        let mut c = form.coefficients_at(k + i64::from(alpha))?;
        for step in (0..alpha).rev() {
            c = shift_coefficients(ltv, &c, k + i64::from(step))?;
        }
        out.push(c);
    }
    Ok(out)
}

fn combine(form: &LinearForm, k: i64, jets: &[Vec<BTreeMap<VarRef, f64>>]) -> Result<BTreeMap<VarRef, f64>, Error> {
    let mut out = BTreeMap::new();
    for (v, c) in &form.terms {
        let c = c.at(k)?;
        let jet = &jets[v.index as usize - 1][v.shift as usize];
        for (w, d) in jet {
            *out.entry(*w).or_insert(0.0) += c * d;
        }
    }
    Ok(out)
}

/// Checks a linear flat pair against an LTV system: the parameterized
/// dynamics at random Δy-jets, and the round trip `Δy ↦ (Δx, Δu)` through
/// `δ_lin` coefficient by coefficient, both over `domain.k_range`.
pub fn verify_linear_pair(
    ltv: &LTVSystem,
    lfo: &LinearFlatOutput,
    lp: &LinearParameterization,
    domain: &SampleDomain,
) -> LinearPairReport {
    let mut dynamics = VerificationReport::new("linear_dynamics", domain.tolerance);
    dynamics.seed = Some(domain.seed);
    let vars: BTreeSet<VarRef> = lp
        .r
        .iter()
        .enumerate()
        .flat_map(|(j, &r)| (0..=r).map(move |a| VarRef::new(VarGroup::DeltaFlatOut, j as u32 + 1, a as i32)))
        .collect();
    let mut unavailable = 0;
    let sampled = domain.for_each_sample(&vars, |b| {
        let k = b.k;
        let step = || -> Result<Vec<(f64, f64)>, Error> {
            let (a, bm) = (ltv.a_at(k)?, ltv.b_at(k)?);
            let x_now = lp.x.iter().map(|f| f.evaluate(k, b)).collect::<Result<Vec<_>, _>>()?;
            let u_now = lp.u.iter().map(|f| f.evaluate(k, b)).collect::<Result<Vec<_>, _>>()?;
            let mut pairs = Vec::new();
            for i in 0..ltv.n {
                let lhs = lp.x[i].evaluate_shifted(k + 1, b, 1)?;
                let rhs = (0..ltv.n).map(|s| a[(i, s)] * x_now[s]).sum::<f64>()
                    + (0..ltv.m).map(|l| bm[(i, l)] * u_now[l]).sum::<f64>();
                pairs.push((lhs, rhs));
            }
            Ok(pairs)
        };
        match step() {
            Ok(pairs) => {
                dynamics.samples += 1;
                for (i, (l, r)) in pairs.into_iter().enumerate() {
                    if dynamics.record(l, r) >= domain.tolerance {
                        dynamics.fail(format!("x{} at k={k}: {l:.12e} vs {r:.12e}", i + 1));
                    }
                }
            }
            Err(_) => unavailable += 1,
        }
    });
    match sampled {
        Ok(rejected) => dynamics.skipped += rejected + unavailable,
        Err(e) => dynamics.fail(format!("{e}")),
    }
    dynamics.conclude();

    let mut round_trip = VerificationReport::new("linear_round_trip", domain.tolerance);
    let (lo, hi) = domain.k_range;
    for k in lo..=hi {
        let step = || -> Result<Vec<BTreeMap<VarRef, f64>>, Error> {
            let jets = lfo
                .components
                .iter()
                .zip(&lp.r)
                .map(|(form, &r)| shifted_flat_output(ltv, form, r, k))
                .collect::<Result<Vec<_>, _>>()?;
            lp.x.iter().chain(&lp.u).map(|f| combine(f, k, &jets)).collect()
        };
        match step() {
            Ok(results) => {
                round_trip.samples += 1;
                for (idx, coeffs) in results.into_iter().enumerate() {
                    let target = if idx < ltv.n {
                        VarRef::new(VarGroup::DeltaState, idx as u32 + 1, 0)
                    } else {
                        VarRef::new(VarGroup::DeltaInput, (idx - ltv.n) as u32 + 1, 0)
                    };
                    let mut keys: BTreeSet<VarRef> = coeffs.keys().copied().collect();
                    keys.insert(target);
                    for v in keys {
                        let got = coeffs.get(&v).copied().unwrap_or(0.0);
                        let want = if v == target { 1.0 } else { 0.0 };
                        if round_trip.record(got, want) >= domain.tolerance {
                            round_trip.fail(format!("{target} at k={k}: coefficient of {v} is {got:.12e}"));
                        }
                    }
                }
            }
            Err(_) => round_trip.skipped += 1,
        }
    }
    round_trip.conclude();
    LinearPairReport { dynamics, round_trip }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::expr::{parse, Exact};
    use crate::verify::numeric_equal;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn lie_linearization_of_product_row() {
        let h = ExtendedFunction::new(p("x3 + u1*u2")).unwrap();
        let l = lie_linearize(&h);
        let r = numeric_equal(l.expr(), &p("dx3 + u2*du1 + u1*du2"), &SampleDomain::default()).unwrap();
        assert!(r.passed, "{r}");
        assert!(is_delta_linear(l.expr()));
    }

    #[test]
    fn lie_linearization_of_constant() {
        let h = ExtendedFunction::new(p("3 + k^2")).unwrap();
        assert!(lie_linearize(&h).expr().is_zero());
    }

    #[test]
    fn delta_lin_rules() {
        let sys = corpus::product_system();
        let d = |s: &str| delta_lin_shift(&sys, &DeltaExtendedFunction::new(p(s)).unwrap(), 1).into_expr();
        assert_eq!(d("dx1"), p("dx1 + du1"));
        assert_eq!(d("du2_[3]"), p("du2_[4]"));
        assert_eq!(d("dz1_[-1]"), p("dx1"));
        assert_eq!(d("dz2_[-3]"), p("dz2_[-2]"));
    }

    #[test]
    fn delta_lin_of_x_and_zeta_match_linearized_f_and_g() {
        for sys in [corpus::product_system(), corpus::nonflat_system()] {
            let dl = DeltaLin::new(&sys);
            for (i, f) in sys.f().iter().enumerate() {
                let lhs = dl.shift_expr(&Expr::var(VarRef::x(i as u32 + 1).delta()));
                let r = numeric_equal(&lhs, &lie_linearize_expr(f), &SampleDomain::default()).unwrap();
                assert!(r.passed, "{r}");
            }
            for (j, g) in sys.g().iter().enumerate() {
                let lhs = dl.shift_expr(&Expr::var(VarRef::zeta(j as u32 + 1, -1).delta()));
                let r = numeric_equal(&lhs, &lie_linearize_expr(g), &SampleDomain::default()).unwrap();
                assert!(r.passed, "{r}");
            }
        }
    }

    #[test]
    fn rejects_nonlinear_delta_functions() {
        assert!(DeltaExtendedFunction::new(p("dx1*dx2")).is_err());
        assert!(DeltaExtendedFunction::new(p("sin(x1)*dx2 + du1")).is_ok());
    }

    #[test]
    fn commutation_on_corpus() {
        for (sys, h) in corpus::commutation_corpus() {
            let h = sys.extended(h).unwrap();
            let r = check_commutation(&sys, &h, COMMUTATION_DEPTH, &SampleDomain::default().with_samples(30)).unwrap();
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn commutation_on_shifted_input_is_relabeling() {
        let sys = corpus::product_system();
        let h = sys.extended(p("u1_[2]")).unwrap();
        let r = check_commutation(&sys, &h, 1, &SampleDomain::default()).unwrap();
        assert!(r.passed && r.max_abs_deviation == 0.0, "{r}");
    }

    #[test]
    fn product_linearization_is_exact() {
        let ltv = linearize_along(&corpus::product_system(), &corpus::product_trajectory(), (-10, 10)).unwrap();
        assert!(ltv.is_closed());
        for k in -10i64..=10 {
            let kk = i128::from(k);
            for i in 0..3 {
                for s in 0..3 {
                    let want = Exact::from_integer(i128::from(i == s));
                    assert_eq!(ltv.a[i][s].exact_at(k), Some(want));
                }
            }
            let b: Vec<Vec<Exact>> =
                ltv.b.iter().map(|row| row.iter().map(|e| e.exact_at(k).unwrap()).collect()).collect();
            let z = Exact::from_integer;
            assert_eq!(b, alloc::vec![alloc::vec![z(1), z(0)], alloc::vec![z(0), z(1)], alloc::vec![z(-kk), z(kk)]]);
        }
        assert!(ltv.check_regularity((-10, 10)).passed);
    }

    #[test]
    fn nonflat_linearization_matches_displayed_form() {
        let sys = corpus::nonflat_system();
        let traj = Trajectory::closed(
            alloc::vec![p("k/3"), p("k^2/7"), p("1 - k/5")],
            alloc::vec![p("k/2"), p("1/3")],
        )
        .unwrap();
        let ltv = linearize_along(&sys, &traj, (-5, 5)).unwrap();
        for k in -5..=5 {
            let b = traj.point_binding(k).unwrap();
            let x = |i| b.get(&VarRef::x(i)).unwrap();
            let c = libm::cos(x(1) - x(3));
            let s = libm::sin(x(1) - x(3));
            let u1 = b.get(&VarRef::u(1, 0)).unwrap();
            let want_a = Matrix::from_row_slice(3, 3, &[-c, 0., c, -c * u1, 0., c * u1, 0., 0., 0.]);
            let want_b = Matrix::from_row_slice(3, 2, &[0., 1., 1. - s, 0., 0., 1.]);
            assert!((ltv.a_at(k).unwrap() - want_a).amax() < 1e-15);
            assert!((ltv.b_at(k).unwrap() - want_b).amax() < 1e-15);
        }
    }

    #[test]
    fn linear_system_is_its_own_linearization() {
        let sys = corpus::double_integrator_system();
        let t1 = Trajectory::closed(alloc::vec![Expr::zero(), Expr::zero()], alloc::vec![Expr::zero()]).unwrap();
        let t2 = Trajectory::closed(alloc::vec![p("k^3"), p("sin(k)")], alloc::vec![p("k")]).unwrap();
        let a = linearize_along(&sys, &t1, (0, 3)).unwrap();
        let b = linearize_along(&sys, &t2, (0, 3)).unwrap();
        for k in 0..=3 {
            assert_eq!(a.a_at(k).unwrap(), b.a_at(k).unwrap());
            assert_eq!(a.b_at(k).unwrap(), b.b_at(k).unwrap());
        }
        assert_eq!(a.a_at(0).unwrap(), Matrix::from_row_slice(2, 2, &[1., 1., 0., 1.]));
    }

    #[test]
    fn tabulated_trajectory_gives_sampled_system() {
        let closed = corpus::product_trajectory();
        let tab = Trajectory::new(closed.x.tabulate(-4, 6).unwrap(), closed.u.tabulate(-4, 5).unwrap());
        let ltv = linearize_along(&corpus::product_system(), &tab, (-10, 10)).unwrap();
        assert!(!ltv.is_closed());
        assert_eq!(ltv.window(), Some((-4, 5)));
        assert_eq!(ltv.b_at(5).unwrap()[(2, 0)], -5.0);
        assert!(ltv.b_at(6).is_err());
    }

    #[test]
    fn integrator_linear_pair() {
        let sys = corpus::integrator_system();
        let pair = corpus::integrator_pair();
        let traj = Trajectory::closed(alloc::vec![p("k^2")], alloc::vec![p("2*k + 1")]).unwrap();
        let ltv = linearize_along(&sys, &traj, (-5, 5)).unwrap();
        let (lfo, lp) = linearize_flat_pair(&sys, &pair, &traj, (-5, 5)).unwrap();
        assert_eq!(lfo.components[0].to_expr().unwrap(), p("dx1"));
        assert_eq!(lp.x[0].to_expr().unwrap(), p("dy1"));
        assert_eq!(lp.u[0].to_expr().unwrap(), p("-dy1 + dy1_[1]"));
        let r = verify_linear_pair(&ltv, &lfo, &lp, &SampleDomain::default().with_k_range(-5, 4));
        assert!(r.passed(), "{:?}", r);
        assert_eq!(r.dynamics.max_abs_deviation, 0.0);
    }

    #[test]
    fn product_linear_pair() {
        let sys = corpus::product_system();
        let pair = corpus::product_pair();
        let traj = corpus::product_trajectory();
        let ltv = linearize_along(&sys, &traj, (-10, 10)).unwrap();
        let (lfo, lp) = linearize_flat_pair(&sys, &pair, &traj, (-10, 10)).unwrap();
        let r = verify_linear_pair(&ltv, &lfo, &lp, &SampleDomain::default());
        assert!(r.passed(), "{}\n{}", r.dynamics, r.round_trip);
        assert_eq!(r.round_trip.samples, 21);
    }

    #[test]
    fn perturbed_linear_parameterization_fails() {
        let sys = corpus::product_system();
        let traj = corpus::product_trajectory();
        let ltv = linearize_along(&sys, &traj, (-10, 10)).unwrap();
        let (lfo, mut lp) = linearize_flat_pair(&sys, &corpus::product_pair(), &traj, (-10, 10)).unwrap();
        let (_, c) = &mut lp.x[1].terms[0];
        *c = TimeFunction::Symbolic(c.as_expr().unwrap().add(&Expr::real(1e-3)));
        let r = verify_linear_pair(&ltv, &lfo, &lp, &SampleDomain::default());
        assert!(!r.dynamics.passed);
        assert!(r.dynamics.max_abs_deviation > 1e-4 && r.dynamics.max_abs_deviation < 1e-2, "{}", r.dynamics);
    }

    #[test]
    fn tabulated_linear_pair() {
        let sys = corpus::product_system();
        let closed = corpus::product_trajectory();
        let tab = Trajectory::new(closed.x.tabulate(-6, 10).unwrap(), closed.u.tabulate(-6, 9).unwrap());
        let ltv = linearize_along(&sys, &tab, (-6, 9)).unwrap();
        let (lfo, lp) = linearize_flat_pair(&sys, &corpus::product_pair(), &tab, (-6, 9)).unwrap();
        let r = verify_linear_pair(&ltv, &lfo, &lp, &SampleDomain::default().with_k_range(-5, 2));
        assert!(r.passed(), "{}\n{}", r.dynamics, r.round_trip);
    }

    #[test]
    fn singular_trajectory_is_rejected() {
        let sys = corpus::product_system();
        let traj = Trajectory::closed(alloc::vec![Expr::zero(); 3], alloc::vec![Expr::zero(); 2]).unwrap();
        let err = linearize_flat_pair(&sys, &corpus::product_pair(), &traj, (0, 3)).unwrap_err();
        assert_eq!(err, Error::SingularTrajectory { k: 0 });
    }
}
