//! Exact rational functions of `k`, used to print time-varying coefficients
//! in a canonical expanded form.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, One, Signed, Zero};

use super::{Exact, Expr, Node, Rational};

/// Coefficients in ascending powers of `k`, without trailing zeros.
#[derive(Clone, Debug, PartialEq)]
struct Poly(Vec<Exact>);

impl Poly {
    fn constant(c: Exact) -> Poly {
        Poly(vec![c]).trimmed()
    }

    fn k() -> Poly {
        Poly(vec![Exact::zero(), Exact::one()])
    }

    fn trimmed(mut self) -> Poly {
        while self.0.last().is_some_and(|c| c.is_zero()) {
            self.0.pop();
        }
        self
    }

    fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    fn lead(&self) -> Exact {
        self.0.last().copied().unwrap_or_else(Exact::zero)
    }

    fn add(&self, rhs: &Poly) -> Option<Poly> {
        let len = self.0.len().max(rhs.0.len());
        let z = Exact::zero();
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            out.push(self.0.get(i).unwrap_or(&z).checked_add(rhs.0.get(i).unwrap_or(&z))?);
        }
        Some(Poly(out).trimmed())
    }

    fn neg(&self) -> Poly {
        Poly(self.0.iter().map(|c| -*c).collect())
    }

    fn mul(&self, rhs: &Poly) -> Option<Poly> {
        if self.is_zero() || rhs.is_zero() {
            return Some(Poly(Vec::new()));
        }
        let mut out = vec![Exact::zero(); self.0.len() + rhs.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in rhs.0.iter().enumerate() {
                out[i + j] = out[i + j].checked_add(&a.checked_mul(b)?)?;
            }
        }
        Some(Poly(out).trimmed())
    }

    fn scale(&self, c: &Exact) -> Option<Poly> {
        self.mul(&Poly::constant(*c))
    }

    /// Remainder of the division by a non-zero `d`.
    fn rem(&self, d: &Poly) -> Option<Poly> {
        let mut r = self.clone();
        while !r.is_zero() && r.degree() >= d.degree() {
            let c = r.lead().checked_div(&d.lead())?;
            let shift = r.degree() - d.degree();
            let mut term = vec![Exact::zero(); shift];
            term.push(c);
            r = r.add(&Poly(term).mul(d)?.neg())?;
        }
        Some(r)
    }

    fn quotient(&self, d: &Poly) -> Option<Poly> {
        let mut r = self.clone();
        let mut q = vec![Exact::zero(); self.0.len().saturating_sub(d.degree()).max(1)];
        while !r.is_zero() && r.degree() >= d.degree() {
            let c = r.lead().checked_div(&d.lead())?;
            let shift = r.degree() - d.degree();
            q[shift] = c;
            let mut term = vec![Exact::zero(); shift];
            term.push(c);
            r = r.add(&Poly(term).mul(d)?.neg())?;
        }
        Some(Poly(q).trimmed())
    }

    fn monic(&self) -> Option<Poly> {
        self.scale(&Exact::one().checked_div(&self.lead())?)
    }

    fn gcd(&self, rhs: &Poly) -> Option<Poly> {
        let (mut a, mut b) = (self.clone(), rhs.clone());
        while !b.is_zero() {
            let r = a.rem(&b)?;
            a = b;
            b = r;
        }
        a.monic()
    }

    fn to_expr(&self) -> Option<Expr> {
        let mut out: Option<Expr> = None;
        for (i, c) in self.0.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            let magnitude = c.abs();
            let coeff = Expr::from_rational(Rational::new(
                i64::try_from(*magnitude.numer()).ok()?,
                i64::try_from(*magnitude.denom()).ok()?,
            ));
            let term = match i {
                0 => coeff,
                1 => coeff.mul(&Expr::time()),
                _ => coeff.mul(&Expr::time().pow(i as i32)),
            };
            out = Some(match (out, c.is_negative()) {
                (None, false) => term,
                (None, true) => term.neg(),
                (Some(acc), false) => acc.add(&term),
                (Some(acc), true) => acc.sub(&term),
            });
        }
        Some(out.unwrap_or_else(Expr::zero))
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `num / den` with `den` monic and coprime to `num`.
struct RationalFunction {
    num: Poly,
    den: Poly,
}

impl RationalFunction {
    fn poly(p: Poly) -> Self {
        RationalFunction { num: p, den: Poly::constant(Exact::one()) }
    }

    fn reduced(num: Poly, den: Poly) -> Option<Self> {
        if den.is_zero() {
            return None;
        }
        if num.is_zero() {
            return Some(RationalFunction::poly(num));
        }
        let g = num.gcd(&den)?;
        let (num, den) = (num.quotient(&g)?, den.quotient(&g)?);
        let lead = den.lead();
        Some(RationalFunction {
            num: num.scale(&Exact::one().checked_div(&lead)?)?,
            den: den.monic()?,
        })
    }

    fn add(&self, rhs: &Self) -> Option<Self> {
        RationalFunction::reduced(self.num.mul(&rhs.den)?.add(&rhs.num.mul(&self.den)?)?, self.den.mul(&rhs.den)?)
    }

    fn mul(&self, rhs: &Self) -> Option<Self> {
        RationalFunction::reduced(self.num.mul(&rhs.num)?, self.den.mul(&rhs.den)?)
    }

    fn recip(&self) -> Option<Self> {
        RationalFunction::reduced(self.den.clone(), self.num.clone())
    }

    fn neg(&self) -> Self {
        RationalFunction { num: self.num.neg(), den: self.den.clone() }
    }

    fn from_expr(e: &Expr) -> Option<Self> {
        Some(match e.node() {
            Node::Integer(i) => RationalFunction::poly(Poly::constant(Exact::from_integer(i128::from(*i)))),
            Node::Rational(r) => RationalFunction::poly(Poly::constant(Exact::new(
                i128::from(*r.numer()),
                i128::from(*r.denom()),
            ))),
            Node::Time => RationalFunction::poly(Poly::k()),
            Node::Neg(a) => RationalFunction::from_expr(a)?.neg(),
            Node::Add(a, b) => RationalFunction::from_expr(a)?.add(&RationalFunction::from_expr(b)?)?,
            Node::Sub(a, b) => RationalFunction::from_expr(a)?.add(&RationalFunction::from_expr(b)?.neg())?,
            Node::Mul(a, b) => RationalFunction::from_expr(a)?.mul(&RationalFunction::from_expr(b)?)?,
            Node::Div(a, b) => RationalFunction::from_expr(a)?.mul(&RationalFunction::from_expr(b)?.recip()?)?,
            Node::Pow(a, n) => {
                let base = RationalFunction::from_expr(a)?;
                let base = if *n < 0 { base.recip()? } else { base };
                let mut acc = RationalFunction::poly(Poly::constant(Exact::one()));
                for _ in 0..n.unsigned_abs() {
                    acc = acc.mul(&base)?;
                }
                acc
            }
            Node::Real(_) | Node::Var(_) | Node::Sin(_) | Node::Cos(_) => return None,
        })
    }

    /// Scales the denominator to a primitive integer polynomial.
    fn to_expr(&self) -> Option<Expr> {
        if self.den.degree() == 0 {
            return self.num.to_expr();
        }
        let mut lcm: i128 = 1;
        for c in &self.den.0 {
            lcm = lcm.checked_mul(*c.denom() / gcd(lcm, *c.denom()))?;
        }
        let den = self.den.scale(&Exact::from_integer(lcm))?;
        let content = den.0.iter().fold(0, |g, c| gcd(g, *c.numer()));
        let factor = Exact::new(lcm, content);
        let num = self.num.scale(&factor)?;
        let den = self.den.scale(&factor)?;
        Some(num.to_expr()?.div(&den.to_expr()?))
    }
}

impl Expr {
    /// Expanded `p(k)/q(k)` form of an expression that is a rational
    /// function of `k` with rational coefficients; `None` for anything else
    /// or when exact arithmetic overflows.
    pub fn rational_normal_form(&self) -> Option<Expr> {
        RationalFunction::from_expr(self)?.to_expr()
    }

    /// [`Expr::rational_normal_form`] where it exists, `self` otherwise.
    pub fn simplified_in_k(&self) -> Expr {
        self.rational_normal_form().unwrap_or_else(|| self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;

    fn normal(s: &str) -> alloc::string::String {
        alloc::format!("{}", parse(s).unwrap().rational_normal_form().unwrap())
    }

    #[test]
    fn expands_polynomials() {
        assert_eq!(normal("1/2*k*(k - 1)"), "1/2*k^2 - 1/2*k");
        assert_eq!(normal("(k + 1)^2 - k^2"), "2*k + 1");
        assert_eq!(normal("-(k - 1 - 1)"), "-k + 2");
        assert_eq!(normal("k - k"), "0");
    }

    #[test]
    fn cancels_common_factors() {
        assert_eq!(normal("(k^2 - 1)/(k - 1)"), "k + 1");
        assert_eq!(normal("(2*k)/(4*k^2 + 2*k)"), "1/(2*k + 1)");
        assert_eq!(normal("k/(1/3*k^2 - 1/2)"), "6*k/(2*k^2 - 3)");
        assert_eq!(normal("1/(k*(k - 1)) + 1/k"), "1/(k - 1)");
    }

    #[test]
    fn rejects_non_rational_expressions() {
        assert!(parse("sin(k)").unwrap().rational_normal_form().is_none());
        assert!(parse("x1*k").unwrap().rational_normal_form().is_none());
        assert!(parse("1/(k - k)").unwrap().rational_normal_form().is_none());
        assert_eq!(parse("x1").unwrap().simplified_in_k(), parse("x1").unwrap());
    }

    #[test]
    fn normal_form_has_the_same_values() {
        let e = parse("(-1/6*(k + 1)*k*(2*k + 1) + 1/2*k*(k - 1))/(1/2*(k - 1)*(k - 2) - (k - 1)*k + 1/2*(k + 1)*k)").unwrap();
        let n = e.rational_normal_form().unwrap();
        for k in -5..=5 {
            assert_eq!(e.evaluate_exact_at(k), n.evaluate_exact_at(k));
        }
    }
}
