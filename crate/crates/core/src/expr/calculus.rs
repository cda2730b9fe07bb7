use alloc::collections::BTreeMap;

use super::{Expr, Node, VarRef};

impl Expr {
    /// Exact partial derivative with respect to `v`.
    ///
    /// The time step `k` is a discrete parameter and is never differentiated.
    pub fn differentiate(&self, v: VarRef) -> Expr {
        if !self.depends_on(v) {
            return Expr::zero();
        }
        match self.node() {
            Node::Var(w) => {
                if *w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Integer(_) | Node::Rational(_) | Node::Real(_) | Node::Time => Expr::zero(),
            Node::Neg(a) => a.differentiate(v).neg(),
            Node::Add(a, b) => a.differentiate(v).add(&b.differentiate(v)),
            Node::Sub(a, b) => a.differentiate(v).sub(&b.differentiate(v)),
            Node::Mul(a, b) => {
                let da = a.differentiate(v);
                let db = b.differentiate(v);
                da.mul(b).add(&a.mul(&db))
            }
            Node::Div(a, b) => {
                let da = a.differentiate(v);
                let db = b.differentiate(v);
                if db.is_zero() {
                    da.div(b)
                } else {
                    da.mul(b).sub(&a.mul(&db)).div(&b.pow(2))
                }
            }
            Node::Pow(a, n) => Expr::int(i64::from(*n))
                .mul(&a.pow(*n - 1))
                .mul(&a.differentiate(v)),
            Node::Sin(a) => a.cos().mul(&a.differentiate(v)),
            Node::Cos(a) => a.sin().neg().mul(&a.differentiate(v)),
        }
    }

    /// Gradient entries `∂e/∂v` for every `v` in `vars`.
    pub fn gradient<'a>(&self, vars: impl IntoIterator<Item = &'a VarRef>) -> alloc::vec::Vec<Expr> {
        vars.into_iter().map(|v| self.differentiate(*v)).collect()
    }

    /// Simultaneous substitution of variables (and optionally `k`).
    pub fn substitute(&self, subs: &Substitution) -> Expr {
        self.rewrite(&|v| subs.vars.get(v).cloned(), subs.time.as_ref())
    }

    /// Simultaneous rewrite of variables through a callback; variables for
    /// which `f` returns `None` are kept. `time` replaces `k` when given.
    pub fn rewrite(&self, f: &impl Fn(&VarRef) -> Option<Expr>, time: Option<&Expr>) -> Expr {
        match self.node() {
            Node::Var(v) => f(v).unwrap_or_else(|| self.clone()),
            Node::Time => time.cloned().unwrap_or_else(|| self.clone()),
            Node::Integer(_) | Node::Rational(_) | Node::Real(_) => self.clone(),
            Node::Neg(a) => a.rewrite(f, time).neg(),
            Node::Add(a, b) => a.rewrite(f, time).add(&b.rewrite(f, time)),
            Node::Sub(a, b) => a.rewrite(f, time).sub(&b.rewrite(f, time)),
            Node::Mul(a, b) => a.rewrite(f, time).mul(&b.rewrite(f, time)),
            Node::Div(a, b) => a.rewrite(f, time).div(&b.rewrite(f, time)),
            Node::Pow(a, n) => a.rewrite(f, time).pow(*n),
            Node::Sin(a) => a.rewrite(f, time).sin(),
            Node::Cos(a) => a.rewrite(f, time).cos(),
        }
    }

    /// Replaces `k` by `k + offset`.
    pub fn shift_time(&self, offset: i64) -> Expr {
        if offset == 0 {
            return self.clone();
        }
        self.rewrite(&|_| None, Some(&time_plus(offset)))
    }
}

/// `k + offset`, written as `k - |offset|` for negative offsets.
pub(crate) fn time_plus(offset: i64) -> Expr {
    if offset < 0 {
        Expr::time().sub(&Expr::int(-offset))
    } else {
        Expr::time().add(&Expr::int(offset))
    }
}

/// A simultaneous substitution `v ↦ e` for variables plus an optional
/// replacement for the time symbol.
#[derive(Clone, Debug, Default)]
pub struct Substitution {
    pub vars: BTreeMap<VarRef, Expr>,
    pub time: Option<Expr>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, v: VarRef, e: Expr) -> Self {
        self.vars.insert(v, e);
        self
    }

    pub fn insert(&mut self, v: VarRef, e: Expr) {
        self.vars.insert(v, e);
    }

    /// Also replace `k` by `k + offset`.
    pub fn with_time_offset(mut self, offset: i64) -> Self {
        self.time = Some(time_plus(offset));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty() && self.time.is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    #[test]
    fn product_rule() {
        let e = parse("u1*u2").unwrap();
        assert_eq!(e.differentiate(VarRef::u(1, 0)), parse("u2").unwrap());
    }

    #[test]
    fn chain_rule_through_sine() {
        let e = parse("-sin(x1 - x3) + u2").unwrap();
        assert_eq!(e.differentiate(VarRef::x(1)), parse("-cos(x1 - x3)").unwrap());
        assert_eq!(e.differentiate(VarRef::x(3)), parse("cos(x1 - x3)").unwrap());
        assert_eq!(e.differentiate(VarRef::x(2)), Expr::zero());
    }

    #[test]
    fn time_is_not_differentiated() {
        let e = parse("k*x1 + k^2").unwrap();
        assert_eq!(e.differentiate(VarRef::x(1)), Expr::time());
    }

    #[test]
    fn substitution_is_simultaneous() {
        let e = parse("x1 + u1").unwrap();
        let subs = Substitution::new()
            .with(VarRef::x(1), parse("u1").unwrap())
            .with(VarRef::u(1, 0), parse("x1").unwrap());
        assert_eq!(e.substitute(&subs), parse("u1 + x1").unwrap());
    }

    #[test]
    fn time_substitution() {
        let subs = Substitution::new().with_time_offset(1);
        assert_eq!(Expr::time().substitute(&subs), parse("k + 1").unwrap());
        assert_eq!(parse("k*(k - 1)").unwrap().shift_time(-1), parse("(k - 1)*(k - 1 - 1)").unwrap());
    }

    #[test]
    fn empty_substitution_is_identity() {
        let e = parse("sin(x1)*u2_[3]/z1_[-1] + k").unwrap();
        assert_eq!(e.substitute(&Substitution::new()), e);
    }
}
