//! Immutable symbolic expressions over the time step `k`, shifted system
//! variables and their Δ-counterparts.
//!
//! Expressions are reference-counted trees. Every constructor goes through a
//! small set of local rewrites (constant folding, `0 + a`, `1 * a`, `--a`, ...)
//! so that operators such as differentiation and substitution do not blow up
//! with trivial terms. No global simplification is attempted; identities are
//! checked numerically instead (see [`crate::verify`]).

mod calculus;
mod eval;
mod parse;
mod poly;
mod print;

use alloc::collections::BTreeSet;
use alloc::sync::Arc;
use core::fmt;
use core::ops;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, One, Zero};

pub(crate) use calculus::time_plus;
pub use calculus::Substitution;
pub use eval::{exact_to_f64, Binding, Exact};
pub use parse::{parse, ParseError, ParseErrorKind};

/// Variable families appearing in extended coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarGroup {
    State,
    Input,
    Zeta,
    FlatOut,
    DeltaState,
    DeltaInput,
    DeltaZeta,
    DeltaFlatOut,
}

impl VarGroup {
    pub const ALL: [VarGroup; 8] = [
        VarGroup::State,
        VarGroup::Input,
        VarGroup::Zeta,
        VarGroup::FlatOut,
        VarGroup::DeltaState,
        VarGroup::DeltaInput,
        VarGroup::DeltaZeta,
        VarGroup::DeltaFlatOut,
    ];

    /// Identifier prefix used by the text grammar.
    pub fn prefix(self) -> &'static str {
        match self {
            VarGroup::State => "x",
            VarGroup::Input => "u",
            VarGroup::Zeta => "z",
            VarGroup::FlatOut => "y",
            VarGroup::DeltaState => "dx",
            VarGroup::DeltaInput => "du",
            VarGroup::DeltaZeta => "dz",
            VarGroup::DeltaFlatOut => "dy",
        }
    }

    pub fn from_prefix(prefix: &str) -> Option<VarGroup> {
        VarGroup::ALL.into_iter().find(|g| g.prefix() == prefix)
    }

    pub fn is_delta(self) -> bool {
        matches!(
            self,
            VarGroup::DeltaState
                | VarGroup::DeltaInput
                | VarGroup::DeltaZeta
                | VarGroup::DeltaFlatOut
        )
    }

    /// The Δ-group paired with a nonlinear group.
    pub fn delta(self) -> VarGroup {
        match self {
            VarGroup::State | VarGroup::DeltaState => VarGroup::DeltaState,
            VarGroup::Input | VarGroup::DeltaInput => VarGroup::DeltaInput,
            VarGroup::Zeta | VarGroup::DeltaZeta => VarGroup::DeltaZeta,
            VarGroup::FlatOut | VarGroup::DeltaFlatOut => VarGroup::DeltaFlatOut,
        }
    }

    /// The nonlinear group paired with a Δ-group.
    pub fn base(self) -> VarGroup {
        match self {
            VarGroup::State | VarGroup::DeltaState => VarGroup::State,
            VarGroup::Input | VarGroup::DeltaInput => VarGroup::Input,
            VarGroup::Zeta | VarGroup::DeltaZeta => VarGroup::Zeta,
            VarGroup::FlatOut | VarGroup::DeltaFlatOut => VarGroup::FlatOut,
        }
    }
}

/// A variable `group<index>_[shift]`, e.g. `z1_[-2]` or `du2_[3]`.
///
/// `index` is 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarRef {
    pub group: VarGroup,
    pub index: u32,
    pub shift: i32,
}

impl VarRef {
    pub const fn new(group: VarGroup, index: u32, shift: i32) -> Self {
        VarRef { group, index, shift }
    }

    pub const fn x(index: u32) -> Self {
        VarRef::new(VarGroup::State, index, 0)
    }

    pub const fn u(index: u32, shift: i32) -> Self {
        VarRef::new(VarGroup::Input, index, shift)
    }

    pub const fn zeta(index: u32, shift: i32) -> Self {
        VarRef::new(VarGroup::Zeta, index, shift)
    }

    pub const fn y(index: u32, shift: i32) -> Self {
        VarRef::new(VarGroup::FlatOut, index, shift)
    }

    pub const fn with_shift(self, shift: i32) -> Self {
        VarRef { shift, ..self }
    }

    pub const fn shifted(self, by: i32) -> Self {
        VarRef { shift: self.shift + by, ..self }
    }

    /// The Δ-variable paired with this one (identity on Δ-variables).
    pub fn delta(self) -> Self {
        VarRef { group: self.group.delta(), ..self }
    }

    pub fn base(self) -> Self {
        VarRef { group: self.group.base(), ..self }
    }

    pub fn is_delta(self) -> bool {
        self.group.is_delta()
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.group.prefix(), self.index)?;
        if self.shift != 0 {
            write!(f, "_[{}]", self.shift)?;
        }
        Ok(())
    }
}

/// Exact rational type used for integer and rational constants.
pub type Rational = Ratio<i64>;

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Integer(i64),
    /// Always normalized with a denominator different from one.
    Rational(Rational),
    Real(f64),
    Time,
    Var(VarRef),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, i32),
    Sin(Expr),
    Cos(Expr),
}

/// Shared immutable expression tree.
///
/// Equality is structural.
#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Numeric value of a constant node.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Const {
    Exact(Rational),
    Real(f64),
}

impl Const {
    fn to_f64(self) -> f64 {
        match self {
            Const::Exact(r) => *r.numer() as f64 / *r.denom() as f64,
            Const::Real(v) => v,
        }
    }

    fn into_expr(self) -> Expr {
        match self {
            Const::Exact(r) => Expr::from_rational(r),
            Const::Real(v) => Expr::real(v),
        }
    }

    fn combine(
        self,
        other: Const,
        exact: impl Fn(&Rational, &Rational) -> Option<Rational>,
        real: impl Fn(f64, f64) -> f64,
    ) -> Const {
        if let (Const::Exact(a), Const::Exact(b)) = (self, other) {
            if let Some(r) = exact(&a, &b) {
                return Const::Exact(r);
            }
        }
        Const::Real(real(self.to_f64(), other.to_f64()))
    }
}

impl Expr {
    fn from_node(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn int(value: i64) -> Self {
        Expr::from_node(Node::Integer(value))
    }

    pub fn zero() -> Self {
        Expr::int(0)
    }

    pub fn one() -> Self {
        Expr::int(1)
    }

    /// Exact rational `numer / denom`. Panics on a zero denominator.
    pub fn rational(numer: i64, denom: i64) -> Self {
        Expr::from_rational(Rational::new(numer, denom))
    }

    fn from_rational(r: Rational) -> Self {
        if r.is_integer() {
            Expr::int(*r.numer())
        } else {
            Expr::from_node(Node::Rational(r))
        }
    }

    pub fn real(value: f64) -> Self {
        Expr::from_node(Node::Real(value))
    }

    pub fn time() -> Self {
        Expr::from_node(Node::Time)
    }

    pub fn var(v: VarRef) -> Self {
        Expr::from_node(Node::Var(v))
    }

    fn as_const(&self) -> Option<Const> {
        match self.node() {
            Node::Integer(i) => Some(Const::Exact(Rational::from_integer(*i))),
            Node::Rational(r) => Some(Const::Exact(*r)),
            Node::Real(v) => Some(Const::Real(*v)),
            _ => None,
        }
    }

    /// True for integer, rational and real constant nodes.
    pub fn is_constant(&self) -> bool {
        self.as_const().is_some()
    }

    pub fn is_zero(&self) -> bool {
        match self.node() {
            Node::Integer(0) => true,
            Node::Real(v) => *v == 0.0,
            _ => false,
        }
    }

    pub fn is_one(&self) -> bool {
        match self.node() {
            Node::Integer(1) => true,
            Node::Real(v) => *v == 1.0,
            _ => false,
        }
    }

    fn is_minus_one(&self) -> bool {
        match self.node() {
            Node::Integer(-1) => true,
            Node::Real(v) => *v == -1.0,
            _ => false,
        }
    }

    pub fn neg(&self) -> Expr {
        if let Some(c) = self.as_const() {
            return match c {
                Const::Exact(r) => match Rational::zero().checked_sub(&r) {
                    Some(r) => Expr::from_rational(r),
                    None => Expr::real(-c.to_f64()),
                },
                Const::Real(v) => Expr::real(-v),
            };
        }
        if let Node::Neg(inner) = self.node() {
            return inner.clone();
        }
        Expr::from_node(Node::Neg(self.clone()))
    }

    pub fn add(&self, rhs: &Expr) -> Expr {
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            return a.combine(b, |x, y| x.checked_add(y), |x, y| x + y).into_expr();
        }
        if self.is_zero() {
            return rhs.clone();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        Expr::from_node(Node::Add(self.clone(), rhs.clone()))
    }

    pub fn sub(&self, rhs: &Expr) -> Expr {
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            return a.combine(b, |x, y| x.checked_sub(y), |x, y| x - y).into_expr();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return rhs.neg();
        }
        if Arc::ptr_eq(&self.0, &rhs.0) {
            return Expr::zero();
        }
        Expr::from_node(Node::Sub(self.clone(), rhs.clone()))
    }

    pub fn mul(&self, rhs: &Expr) -> Expr {
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            return a.combine(b, |x, y| x.checked_mul(y), |x, y| x * y).into_expr();
        }
        if self.is_zero() || rhs.is_zero() {
            return Expr::zero();
        }
        if self.is_one() {
            return rhs.clone();
        }
        if rhs.is_one() {
            return self.clone();
        }
        if self.is_minus_one() {
            return rhs.neg();
        }
        if rhs.is_minus_one() {
            return self.neg();
        }
        Expr::from_node(Node::Mul(self.clone(), rhs.clone()))
    }

    /// Quotient. A literal zero denominator is kept as a `Div` node so that
    /// evaluation reports the singularity.
    pub fn div(&self, rhs: &Expr) -> Expr {
        if rhs.is_zero() {
            return Expr::from_node(Node::Div(self.clone(), rhs.clone()));
        }
        if let (Some(a), Some(b)) = (self.as_const(), rhs.as_const()) {
            return a.combine(b, |x, y| x.checked_div(y), |x, y| x / y).into_expr();
        }
        if self.is_zero() {
            return Expr::zero();
        }
        if rhs.is_one() {
            return self.clone();
        }
        if rhs.is_minus_one() {
            return self.neg();
        }
        Expr::from_node(Node::Div(self.clone(), rhs.clone()))
    }

    pub fn pow(&self, exponent: i32) -> Expr {
        if exponent == 0 {
            return Expr::one();
        }
        if exponent == 1 {
            return self.clone();
        }
        if let Some(c) = self.as_const() {
            if let Const::Exact(r) = c {
                if let Some(r) = checked_rational_pow(r, exponent) {
                    return Expr::from_rational(r);
                }
            }
            let v = c.to_f64();
            if v != 0.0 || exponent > 0 {
                return Expr::real(powi(v, exponent));
            }
        }
        Expr::from_node(Node::Pow(self.clone(), exponent))
    }

    pub fn sin(&self) -> Expr {
        if self.is_zero() {
            return Expr::zero();
        }
        Expr::from_node(Node::Sin(self.clone()))
    }

    pub fn cos(&self) -> Expr {
        if self.is_zero() {
            return Expr::one();
        }
        Expr::from_node(Node::Cos(self.clone()))
    }

    /// Sum of an iterator of expressions (zero when empty).
    pub fn sum<I: IntoIterator<Item = Expr>>(terms: I) -> Expr {
        terms.into_iter().fold(Expr::zero(), |acc, t| acc.add(&t))
    }

    /// All variables referenced by the expression.
    pub fn variables(&self) -> BTreeSet<VarRef> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<VarRef>) {
        match self.node() {
            Node::Var(v) => {
                out.insert(*v);
            }
            Node::Integer(_) | Node::Rational(_) | Node::Real(_) | Node::Time => {}
            Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) => {
                a.collect_variables(out)
            }
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.collect_variables(out);
                b.collect_variables(out);
            }
        }
    }

    pub fn depends_on(&self, v: VarRef) -> bool {
        match self.node() {
            Node::Var(w) => *w == v,
            Node::Integer(_) | Node::Rational(_) | Node::Real(_) | Node::Time => false,
            Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) => a.depends_on(v),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
        }
    }

    pub fn depends_on_time(&self) -> bool {
        match self.node() {
            Node::Time => true,
            Node::Var(_) | Node::Integer(_) | Node::Rational(_) | Node::Real(_) => false,
            Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) => a.depends_on_time(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.depends_on_time() || b.depends_on_time()
            }
        }
    }

    /// Number of nodes when the tree is expanded (shared subtrees counted
    /// once per occurrence).
    pub fn size(&self) -> usize {
        1 + match self.node() {
            Node::Integer(_) | Node::Rational(_) | Node::Real(_) | Node::Time | Node::Var(_) => 0,
            Node::Neg(a) | Node::Pow(a, _) | Node::Sin(a) | Node::Cos(a) => a.size(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.size() + b.size()
            }
        }
    }

    /// Polynomial degree in the variables selected by `pred`, or `None`
    /// if they occur non-polynomially (under a division, `sin`, `cos`, or
    /// a negative power).
    pub fn degree_in(&self, pred: &impl Fn(&VarRef) -> bool) -> Option<u32> {
        match self.node() {
            Node::Var(v) => Some(u32::from(pred(v))),
            Node::Integer(_) | Node::Rational(_) | Node::Real(_) | Node::Time => Some(0),
            Node::Neg(a) => a.degree_in(pred),
            Node::Add(a, b) | Node::Sub(a, b) => Some(a.degree_in(pred)?.max(b.degree_in(pred)?)),
            Node::Mul(a, b) => Some(a.degree_in(pred)? + b.degree_in(pred)?),
            Node::Div(a, b) => match b.degree_in(pred)? {
                0 => a.degree_in(pred),
                _ => None,
            },
            Node::Pow(a, n) => match a.degree_in(pred)? {
                0 => Some(0),
                d if *n > 0 => Some(d * (*n as u32)),
                _ => None,
            },
            Node::Sin(a) | Node::Cos(a) => match a.degree_in(pred)? {
                0 => Some(0),
                _ => None,
            },
        }
    }
}

fn checked_rational_pow(base: Rational, exponent: i32) -> Option<Rational> {
    let mut acc = Rational::one();
    for _ in 0..exponent.unsigned_abs() {
        acc = acc.checked_mul(&base)?;
    }
    if exponent < 0 {
        Rational::one().checked_div(&acc)
    } else {
        Some(acc)
    }
}

pub(crate) fn powi(base: f64, exponent: i32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..exponent.unsigned_abs() {
        acc *= base;
    }
    if exponent < 0 {
        1.0 / acc
    } else {
        acc
    }
}

impl From<VarRef> for Expr {
    fn from(v: VarRef) -> Self {
        Expr::var(v)
    }
}

impl From<i64> for Expr {
    fn from(v: i64) -> Self {
        Expr::int(v)
    }
}

macro_rules! binary_op {
    ($trait:ident, $method:ident) => {
        impl ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::$method(self, rhs)
            }
        }
        impl ops::$trait<Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::$method(&self, &rhs)
            }
        }
        impl ops::$trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::$method(&self, rhs)
            }
        }
    };
}

binary_op!(Add, add);
binary_op!(Sub, sub);
binary_op!(Mul, mul);
binary_op!(Div, div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_folding_stays_exact() {
        let half = Expr::int(1) / Expr::int(2);
        assert_eq!(half.node(), &Node::Rational(Rational::new(1, 2)));
        let one = &half + &half;
        assert_eq!(one.node(), &Node::Integer(1));
        assert_eq!(Expr::rational(3, 2).pow(-2).node(), &Node::Rational(Rational::new(4, 9)));
    }

    #[test]
    fn trivial_terms_vanish() {
        let x = Expr::var(VarRef::x(1));
        assert_eq!(&x + &Expr::zero(), x);
        assert_eq!(&x * &Expr::one(), x);
        assert!((&x * &Expr::zero()).is_zero());
        assert_eq!((-(-x.clone())), x);
        assert_eq!(&x * &Expr::int(-1), -x.clone());
        assert_eq!(Expr::zero().cos(), Expr::one());
    }

    #[test]
    fn literal_zero_denominator_is_kept() {
        let x = Expr::var(VarRef::x(1));
        assert!(matches!((&x / &Expr::zero()).node(), Node::Div(_, _)));
    }

    #[test]
    fn degree_detects_linearity() {
        let dx = Expr::var(VarRef::x(1).delta());
        let u = Expr::var(VarRef::u(2, 0));
        let is_delta = |v: &VarRef| v.is_delta();
        assert_eq!((&u * &dx).degree_in(&is_delta), Some(1));
        assert_eq!((&dx * &dx).degree_in(&is_delta), Some(2));
        assert_eq!(dx.sin().degree_in(&is_delta), None);
        assert_eq!(u.sin().degree_in(&is_delta), Some(0));
    }

    #[test]
    fn var_display() {
        assert_eq!(alloc::format!("{}", VarRef::zeta(1, -2)), "z1_[-2]");
        assert_eq!(alloc::format!("{}", VarRef::u(2, 3).delta()), "du2_[3]");
        assert_eq!(alloc::format!("{}", VarRef::x(3)), "x3");
    }
}
