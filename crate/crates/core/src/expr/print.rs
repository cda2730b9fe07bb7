use core::fmt;

use super::{Expr, Node};

// Binding strength used to decide where parentheses are required so that
// printing followed by parsing reproduces the same tree.
const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POWER: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Add(..) | Node::Sub(..) => PREC_SUM,
        Node::Mul(..) | Node::Div(..) | Node::Rational(_) => PREC_PRODUCT,
        Node::Neg(_) => PREC_UNARY,
        Node::Integer(i) if *i < 0 => PREC_UNARY,
        Node::Real(v) if v.is_sign_negative() => PREC_UNARY,
        Node::Pow(..) => PREC_POWER,
        _ => PREC_ATOM,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, child: &Expr, needs_parens: bool) -> fmt::Result {
    if needs_parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Integer(i) => write!(f, "{i}"),
            Node::Rational(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            Node::Real(v) => write!(f, "{v:?}"),
            Node::Time => f.write_str("k"),
            Node::Var(v) => write!(f, "{v}"),
            Node::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, precedence(a) <= PREC_UNARY)
            }
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                let (prec, op) = match self.node() {
                    Node::Add(..) => (PREC_SUM, " + "),
                    Node::Sub(..) => (PREC_SUM, " - "),
                    Node::Mul(..) => (PREC_PRODUCT, "*"),
                    _ => (PREC_PRODUCT, "/"),
                };
                write_child(f, a, precedence(a) < prec)?;
                f.write_str(op)?;
                write_child(f, b, precedence(b) <= prec)
            }
            Node::Pow(a, n) => {
                write_child(f, a, precedence(a) <= PREC_POWER)?;
                write!(f, "^{n}")
            }
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse, VarRef};
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn prints_minimal_parentheses() {
        let x1 = Expr::var(VarRef::x(1));
        let x3 = Expr::var(VarRef::x(3));
        let u2 = Expr::var(VarRef::u(2, 0));
        let e = (-(&x1 - &x3).sin()) + u2.clone();
        assert_eq!(e.to_string(), "-sin(x1 - x3) + u2");
        let nested = &x1 - &(&x3 - &u2);
        assert_eq!(nested.to_string(), "x1 - (x3 - u2)");
        let half_k = Expr::rational(1, 2) * Expr::time();
        assert_eq!(half_k.to_string(), "1/2*k");
        assert_eq!((&x1 * &Expr::rational(-1, 2)).to_string(), "x1*(-1/2)");
        assert_eq!((-(&x1 * &x3)).to_string(), "-(x1*x3)");
        assert_eq!((&x1 + &x3).pow(2).to_string(), "(x1 + x3)^2");
    }

    #[test]
    fn printed_text_parses_back() {
        for text in [
            "x1 + u1",
            "-sin(x1 - x3) + u2",
            "(y2 - y2_[1])/(y1 - 2*y1_[1] + y1_[2])",
            "1/2*k*(k - 1)",
            "x1^-2*cos(dz1_[-3])",
            "x1 - -2.5",
        ] {
            let e = parse(text).unwrap();
            assert_eq!(parse(&e.to_string()).unwrap(), e, "{text}");
        }
    }
}
