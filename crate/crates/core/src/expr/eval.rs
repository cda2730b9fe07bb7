use alloc::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, One, Zero};

use super::{powi, Expr, Node, VarRef};
use crate::Error;

/// Denominators below this magnitude are treated as a singularity.
pub const DIVISION_EPSILON: f64 = 1e-300;

/// Values for the time step and for every variable of an expression.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Binding {
    pub k: i64,
    pub values: BTreeMap<VarRef, f64>,
}

impl Binding {
    pub fn new(k: i64) -> Self {
        Binding { k, values: BTreeMap::new() }
    }

    pub fn with(mut self, v: VarRef, value: f64) -> Self {
        self.values.insert(v, value);
        self
    }

    pub fn set(&mut self, v: VarRef, value: f64) {
        self.values.insert(v, value);
    }

    pub fn get(&self, v: &VarRef) -> Option<f64> {
        self.values.get(v).copied()
    }
}

/// Exact rational values used when all data are integer/rational.
pub type Exact = Ratio<i128>;

impl Expr {
    /// IEEE double evaluation.
    pub fn evaluate(&self, b: &Binding) -> Result<f64, Error> {
        Ok(match self.node() {
            Node::Integer(i) => *i as f64,
            Node::Rational(r) => *r.numer() as f64 / *r.denom() as f64,
            Node::Real(v) => *v,
            Node::Time => b.k as f64,
            Node::Var(v) => b.get(v).ok_or(Error::MissingVariable(*v))?,
            Node::Neg(a) => -a.evaluate(b)?,
            Node::Add(x, y) => x.evaluate(b)? + y.evaluate(b)?,
            Node::Sub(x, y) => x.evaluate(b)? - y.evaluate(b)?,
            Node::Mul(x, y) => x.evaluate(b)? * y.evaluate(b)?,
            Node::Div(x, y) => {
                let num = x.evaluate(b)?;
                let den = y.evaluate(b)?;
                if den.abs() < DIVISION_EPSILON {
                    return Err(Error::DivisionNearZero);
                }
                num / den
            }
            Node::Pow(a, n) => {
                let base = a.evaluate(b)?;
                if *n < 0 && base.abs() < DIVISION_EPSILON {
                    return Err(Error::DivisionNearZero);
                }
                powi(base, *n)
            }
            Node::Sin(a) => libm::sin(a.evaluate(b)?),
            Node::Cos(a) => libm::cos(a.evaluate(b)?),
        })
    }

    /// Exact rational evaluation. Returns `None` when the expression
    /// contains real constants or trigonometric nodes, when a variable is
    /// missing, on division by zero, or on overflow.
    pub fn evaluate_exact(&self, k: i64, values: &BTreeMap<VarRef, Exact>) -> Option<Exact> {
        match self.node() {
            Node::Integer(i) => Some(Exact::from_integer(i128::from(*i))),
            Node::Rational(r) => Some(Exact::new(i128::from(*r.numer()), i128::from(*r.denom()))),
            Node::Real(_) | Node::Sin(_) | Node::Cos(_) => None,
            Node::Time => Some(Exact::from_integer(i128::from(k))),
            Node::Var(v) => values.get(v).copied(),
            Node::Neg(a) => Exact::zero().checked_sub(&a.evaluate_exact(k, values)?),
            Node::Add(x, y) => x.evaluate_exact(k, values)?.checked_add(&y.evaluate_exact(k, values)?),
            Node::Sub(x, y) => x.evaluate_exact(k, values)?.checked_sub(&y.evaluate_exact(k, values)?),
            Node::Mul(x, y) => x.evaluate_exact(k, values)?.checked_mul(&y.evaluate_exact(k, values)?),
            Node::Div(x, y) => x.evaluate_exact(k, values)?.checked_div(&y.evaluate_exact(k, values)?),
            Node::Pow(a, n) => {
                let base = a.evaluate_exact(k, values)?;
                let mut acc = Exact::one();
                for _ in 0..n.unsigned_abs() {
                    acc = acc.checked_mul(&base)?;
                }
                if *n < 0 {
                    Exact::one().checked_div(&acc)
                } else {
                    Some(acc)
                }
            }
        }
    }

    /// Exact value of an expression in `k` alone.
    pub fn evaluate_exact_at(&self, k: i64) -> Option<Exact> {
        self.evaluate_exact(k, &BTreeMap::new())
    }

    /// Value of an expression in `k` alone, computed exactly when the
    /// expression is rational and rounded once at the end.
    pub fn evaluate_at(&self, k: i64) -> Result<f64, Error> {
        match self.evaluate_exact_at(k) {
            Some(q) => Ok(exact_to_f64(q)),
            None => self.evaluate(&Binding::new(k)),
        }
    }
}

pub fn exact_to_f64(q: Exact) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

#[cfg(test)]
mod tests {
    use super::super::{parse, Substitution};
    use super::*;

    #[test]
    fn evaluates_shifted_state_on_trajectory() {
        // x1(k) = k(k-1)/2 and u1(k) = k at k = 3 give x1(4) = 6.
        let e = parse("x1 + u1").unwrap();
        let b = Binding::new(3).with(VarRef::x(1), 3.0).with(VarRef::u(1, 0), 3.0);
        assert_eq!(e.evaluate(&b).unwrap(), 6.0);
        let traj = Substitution::new()
            .with(VarRef::x(1), parse("1/2*k*(k - 1)").unwrap())
            .with(VarRef::u(1, 0), parse("k").unwrap());
        assert_eq!(e.substitute(&traj).evaluate(&Binding::new(3)).unwrap(), 6.0);
    }

    #[test]
    fn time_symbol() {
        assert_eq!(Expr::time().evaluate(&Binding::new(0)).unwrap(), 0.0);
        assert_eq!(Expr::time().evaluate(&Binding::new(-7)).unwrap(), -7.0);
    }

    #[test]
    fn missing_variable_is_reported() {
        let e = parse("x1 + u1").unwrap();
        let b = Binding::new(0).with(VarRef::x(1), 1.0);
        assert_eq!(e.evaluate(&b), Err(Error::MissingVariable(VarRef::u(1, 0))));
    }

    #[test]
    fn singular_denominator_is_reported() {
        let e = parse("1/(y1 - 2*y1_[1] + y1_[2])").unwrap();
        let b = Binding::new(0)
            .with(VarRef::y(1, 0), 1.0)
            .with(VarRef::y(1, 1), 1.0)
            .with(VarRef::y(1, 2), 1.0);
        assert_eq!(e.evaluate(&b), Err(Error::DivisionNearZero));
    }

    #[test]
    fn exact_evaluation() {
        let e = parse("-1/6*k*(k - 1)*(2*k - 1)").unwrap();
        assert_eq!(e.evaluate_exact_at(3), Some(Exact::from_integer(-5)));
        assert_eq!(parse("sin(k)").unwrap().evaluate_exact_at(1), None);
        assert_eq!(parse("1/(k - 2)").unwrap().evaluate_exact_at(2), None);
    }

    #[test]
    fn evaluation_is_bit_reproducible() {
        let e = parse("sin(x1)*cos(x1 - u2)/(1 + x1^2)").unwrap();
        let b = Binding::new(1).with(VarRef::x(1), 0.37).with(VarRef::u(2, 0), -1.7);
        let first = e.evaluate(&b).unwrap();
        for _ in 0..10 {
            assert_eq!(e.evaluate(&b).unwrap().to_bits(), first.to_bits());
        }
    }
}
