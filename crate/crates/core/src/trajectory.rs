//! Signals over the integer time axis and system trajectories.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::expr::{Binding, Exact, Expr, Substitution, VarGroup, VarRef};
use crate::system::DiscreteTimeSystem;
use crate::Error;

/// A scalar function of the time step, either symbolic in `k` or sampled
/// on a contiguous window.
#[derive(Clone, Debug, PartialEq)]
pub enum TimeFunction {
    Symbolic(Expr),
    Sampled { k0: i64, values: Vec<f64> },
}

impl TimeFunction {
    pub fn at(&self, k: i64) -> Result<f64, Error> {
        match self {
            TimeFunction::Symbolic(e) => e.evaluate_at(k),
            TimeFunction::Sampled { k0, values } => usize::try_from(k - k0)
                .ok()
                .and_then(|i| values.get(i).copied())
                .ok_or(Error::TrajectoryUnavailable { k }),
        }
    }

    /// Exact value for symbolic functions with rational data.
    pub fn exact_at(&self, k: i64) -> Option<Exact> {
        match self {
            TimeFunction::Symbolic(e) => e.evaluate_exact_at(k),
            TimeFunction::Sampled { .. } => None,
        }
    }

    pub fn as_expr(&self) -> Option<&Expr> {
        match self {
            TimeFunction::Symbolic(e) => Some(e),
            TimeFunction::Sampled { .. } => None,
        }
    }

    /// Inclusive window on which a sampled function is defined.
    pub fn window(&self) -> Option<(i64, i64)> {
        match self {
            TimeFunction::Symbolic(_) => None,
            TimeFunction::Sampled { k0, values } => Some((*k0, *k0 + values.len() as i64 - 1)),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TimeFunction::Symbolic(e) => e.is_zero(),
            TimeFunction::Sampled { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }
}

/// A vector-valued signal `k ↦ s(k)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Signal {
    /// Closed-form components, expressions in `k` alone.
    Closed(Vec<Expr>),
    /// Samples `rows[i] = s(k0 + i)`.
    Tabulated { k0: i64, rows: Vec<Vec<f64>> },
}

impl Signal {
    pub fn closed(components: Vec<Expr>) -> Result<Self, Error> {
        for e in &components {
            if let Some(v) = e.variables().into_iter().next() {
                return Err(Error::InvalidCoordinates(format!(
                    "closed-form signal component {e} references {v}; only k is allowed"
                )));
            }
        }
        Ok(Signal::Closed(components))
    }

    pub fn dim(&self) -> usize {
        match self {
            Signal::Closed(c) => c.len(),
            Signal::Tabulated { rows, .. } => rows.first().map_or(0, Vec::len),
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, Signal::Closed(_))
    }

    /// Inclusive window of a tabulated signal; `None` when closed-form.
    pub fn window(&self) -> Option<(i64, i64)> {
        match self {
            Signal::Closed(_) => None,
            Signal::Tabulated { k0, rows } => Some((*k0, *k0 + rows.len() as i64 - 1)),
        }
    }

    pub fn contains(&self, k: i64) -> bool {
        self.window().is_none_or(|(lo, hi)| lo <= k && k <= hi)
    }

    pub fn at(&self, k: i64) -> Result<Vec<f64>, Error> {
        match self {
            Signal::Closed(c) => c.iter().map(|e| e.evaluate_at(k)).collect(),
            Signal::Tabulated { k0, rows } => usize::try_from(k - k0)
                .ok()
                .and_then(|i| rows.get(i).cloned())
                .ok_or(Error::TrajectoryUnavailable { k }),
        }
    }

    pub fn component(&self, i: usize, k: i64) -> Result<f64, Error> {
        match self {
            Signal::Closed(c) => c[i].evaluate_at(k),
            Signal::Tabulated { .. } => Ok(self.at(k)?[i]),
        }
    }

    pub fn exact_at(&self, k: i64) -> Option<Vec<Exact>> {
        match self {
            Signal::Closed(c) => c.iter().map(|e| e.evaluate_exact_at(k)).collect(),
            Signal::Tabulated { .. } => None,
        }
    }

    /// Samples a closed-form signal on `[lo, hi]`.
    pub fn tabulate(&self, lo: i64, hi: i64) -> Result<Signal, Error> {
        let rows = (lo..=hi).map(|k| self.at(k)).collect::<Result<Vec<_>, _>>()?;
        Ok(Signal::Tabulated { k0: lo, rows })
    }
}

/// A state/input trajectory `(x(k), u(k))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Signal,
    pub u: Signal,
}

impl Trajectory {
    pub fn new(x: Signal, u: Signal) -> Self {
        Trajectory { x, u }
    }

    pub fn closed(x: Vec<Expr>, u: Vec<Expr>) -> Result<Self, Error> {
        Ok(Trajectory { x: Signal::closed(x)?, u: Signal::closed(u)? })
    }

    pub fn is_closed(&self) -> bool {
        self.x.is_closed() && self.u.is_closed()
    }

    /// Steps `k` at which `x(k)`, `u(k)` and `x(k+1)` are all available,
    /// intersected with `[lo, hi]`.
    pub fn transition_window(&self, lo: i64, hi: i64) -> Option<(i64, i64)> {
        let mut lo = lo;
        let mut hi = hi;
        if let Some((a, b)) = self.x.window() {
            lo = lo.max(a);
            hi = hi.min(b - 1);
        }
        if let Some((a, b)) = self.u.window() {
            lo = lo.max(a);
            hi = hi.min(b);
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Closed-form substitution of extended coordinates by their values
    /// along the trajectory: `z_[-β] ↦ g(k-β, x(k-β), u(k-β))`,
    /// `x ↦ x(k)`, `u_[α] ↦ u(k+α)`.
    pub fn substitution_for(
        &self,
        sys: &DiscreteTimeSystem,
        vars: impl IntoIterator<Item = VarRef>,
    ) -> Result<Substitution, Error> {
        let (Signal::Closed(xs), Signal::Closed(us)) = (&self.x, &self.u) else {
            return Err(Error::Precondition("closed-form trajectory required".into()));
        };
        let mut point = Substitution::new();
        for (i, e) in xs.iter().enumerate() {
            point.insert(VarRef::x(i as u32 + 1), e.clone());
        }
        for (j, e) in us.iter().enumerate() {
            point.insert(VarRef::u(j as u32 + 1, 0), e.clone());
        }
        let mut subs = Substitution::new();
        for v in vars {
            let value = match v.group {
                VarGroup::State => xs.get(v.index as usize - 1).cloned(),
                VarGroup::Input => {
                    us.get(v.index as usize - 1).map(|e| e.shift_time(i64::from(v.shift)))
                }
                VarGroup::Zeta => sys
                    .g()
                    .get(v.index as usize - 1)
                    .map(|g| g.substitute(&point).shift_time(i64::from(v.shift))),
                _ => continue,
            };
            let value = value.ok_or_else(|| {
                Error::InvalidCoordinates(format!("{v} is outside the system dimensions"))
            })?;
            subs.insert(v, value);
        }
        Ok(subs)
    }

    /// Numeric value of one extended coordinate at step `k`.
    pub fn coordinate(&self, sys: &DiscreteTimeSystem, v: VarRef, k: i64) -> Result<f64, Error> {
        let i = v.index as usize - 1;
        match v.group {
            VarGroup::State => self.x.component(i, k),
            VarGroup::Input => self.u.component(i, k + i64::from(v.shift)),
            VarGroup::Zeta => {
                let at = k + i64::from(v.shift);
                let b = self.point_binding(at)?;
                sys.g()
                    .get(i)
                    .ok_or_else(|| Error::InvalidCoordinates(format!("{v} is outside the system")))?
                    .evaluate(&b)
            }
            _ => Err(Error::InvalidCoordinates(format!("{v} is not an extended coordinate"))),
        }
    }

    /// Binding of `k`, `x(k)` and `u(k)`.
    pub fn point_binding(&self, k: i64) -> Result<Binding, Error> {
        let mut b = Binding::new(k);
        for (i, v) in self.x.at(k)?.into_iter().enumerate() {
            b.set(VarRef::x(i as u32 + 1), v);
        }
        for (j, v) in self.u.at(k)?.into_iter().enumerate() {
            b.set(VarRef::u(j as u32 + 1, 0), v);
        }
        Ok(b)
    }

    /// Binding of the given extended coordinates at step `k`.
    pub fn binding_for(
        &self,
        sys: &DiscreteTimeSystem,
        vars: impl IntoIterator<Item = VarRef>,
        k: i64,
    ) -> Result<Binding, Error> {
        let mut b = Binding::new(k);
        for v in vars {
            b.set(v, self.coordinate(sys, v, k)?);
        }
        Ok(b)
    }

    /// The function `k ↦ h(k, ζ(k-q1..k-1), x(k), u(k..k+q2))` for an
    /// expression in extended coordinates. Symbolic for closed-form
    /// trajectories, otherwise sampled on the largest window of `[lo, hi]`
    /// where every coordinate is available.
    pub fn along(
        &self,
        sys: &DiscreteTimeSystem,
        h: &Expr,
        (lo, hi): (i64, i64),
    ) -> Result<TimeFunction, Error> {
        let vars = h.variables();
        if self.is_closed() {
            let subs = self.substitution_for(sys, vars.iter().copied())?;
            return Ok(TimeFunction::Symbolic(h.substitute(&subs)));
        }
        let mut values = Vec::new();
        let mut k0 = None;
        for k in lo..=hi {
            match self.binding_for(sys, vars.iter().copied(), k) {
                Ok(b) => {
                    if k0.is_none() {
                        k0 = Some(k);
                    }
                    values.push(h.evaluate(&b)?);
                }
                Err(Error::TrajectoryUnavailable { .. }) if k0.is_none() => continue,
                Err(Error::TrajectoryUnavailable { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        let k0 = k0.ok_or(Error::TrajectoryUnavailable { k: lo })?;
        Ok(TimeFunction::Sampled { k0, values })
    }

    /// Evaluates many functions along the trajectory on a common window.
    pub fn along_all(
        &self,
        sys: &DiscreteTimeSystem,
        hs: &[Expr],
        window: (i64, i64),
    ) -> Result<Vec<TimeFunction>, Error> {
        hs.iter().map(|h| self.along(sys, h, window)).collect()
    }

    /// Exact values of the trajectory coordinates, for rational data.
    pub(crate) fn exact_point(&self, k: i64) -> Option<BTreeMap<VarRef, Exact>> {
        let mut out = BTreeMap::new();
        for (i, v) in self.x.exact_at(k)?.into_iter().enumerate() {
            out.insert(VarRef::x(i as u32 + 1), v);
        }
        for (j, v) in self.u.exact_at(k)?.into_iter().enumerate() {
            out.insert(VarRef::u(j as u32 + 1, 0), v);
        }
        Some(out)
    }
}
