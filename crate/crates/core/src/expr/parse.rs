//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' exponent)?
//! exponent:= ['-' | '+'] INT | '(' ['-' | '+'] INT ')'
//! primary := NUMBER | 'k' | VAR | ('sin' | 'cos') '(' sum ')' | '(' sum ')'
//! VAR     := ('x' | 'u' | 'z' | 'y' | 'dx' | 'du' | 'dz' | 'dy') INDEX ['_[' SIGNED_INT ']']
//! ```
//!
//! Trees are built through the simplifying constructors of [`Expr`].

use alloc::string::String;
use core::fmt;

use super::{Expr, VarGroup, VarRef};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedEnd,
    Expected(&'static str),
    InvalidNumber,
    UnknownVariable(String),
    ZeroIndex,
    ShiftedState,
    ZeroDenominator,
    TrailingInput,
}

/// Syntax error with the byte offset where it was detected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub position: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at offset {}: ", self.position)?;
        match &self.kind {
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character '{c}'"),
            ParseErrorKind::UnexpectedEnd => f.write_str("unexpected end of input"),
            ParseErrorKind::Expected(what) => write!(f, "expected {what}"),
            ParseErrorKind::InvalidNumber => f.write_str("invalid number literal"),
            ParseErrorKind::UnknownVariable(name) => write!(f, "unknown variable '{name}'"),
            ParseErrorKind::ZeroIndex => f.write_str("variable indices start at 1"),
            ParseErrorKind::ShiftedState => {
                f.write_str("state variables cannot carry a shift index")
            }
            ParseErrorKind::ZeroDenominator => f.write_str("division by literal zero"),
            ParseErrorKind::TrailingInput => f.write_str("unexpected trailing input"),
        }
    }
}

impl core::error::Error for ParseError {}

/// Parses an expression in the text grammar.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    let e = p.sum()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(ParseErrorKind::TrailingInput));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { position: self.pos, kind }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8, what: &'static str) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else if self.pos >= self.src.len() {
            Err(self.error(ParseErrorKind::UnexpectedEnd))
        } else {
            Err(self.error(ParseErrorKind::Expected(what)))
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.product()?;
        loop {
            if self.eat(b'+') {
                acc = acc.add(&self.product()?);
            } else if self.eat(b'-') {
                acc = acc.sub(&self.product()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat(b'*') {
                acc = acc.mul(&self.unary()?);
            } else if self.eat(b'/') {
                let at = self.pos;
                let rhs = self.unary()?;
                if rhs.is_zero() {
                    return Err(ParseError { position: at, kind: ParseErrorKind::ZeroDenominator });
                }
                acc = acc.div(&rhs);
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(self.unary()?.neg())
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let parenthesized = self.eat(b'(');
        let negative = if self.eat(b'-') {
            true
        } else {
            self.eat(b'+');
            false
        };
        self.skip_ws();
        let start = self.pos;
        let digits = self.digits();
        if digits.is_empty() {
            return Err(ParseError { position: start, kind: ParseErrorKind::Expected("integer exponent") });
        }
        let magnitude: i32 = digits
            .parse()
            .map_err(|_| ParseError { position: start, kind: ParseErrorKind::InvalidNumber })?;
        if parenthesized {
            self.expect(b')', "')'")?;
        }
        Ok(base.pow(if negative { -magnitude } else { magnitude }))
    }

    fn digits(&mut self) -> &str {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        // Only ASCII digits were consumed.
        core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(c) = self.peek() else {
            return Err(self.error(ParseErrorKind::UnexpectedEnd));
        };
        match c {
            b'(' => {
                self.pos += 1;
                let e = self.sum()?;
                self.expect(b')', "')'")?;
                Ok(e)
            }
            b'0'..=b'9' | b'.' => self.number(),
            c if c.is_ascii_alphabetic() => self.identifier(),
            _ => {
                let ch = core::str::from_utf8(&self.src[self.pos..])
                    .ok()
                    .and_then(|s| s.chars().next())
                    .unwrap_or(char::REPLACEMENT_CHARACTER);
                Err(self.error(ParseErrorKind::UnexpectedChar(ch)))
            }
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let mut real = false;
        self.digits();
        if self.src.get(self.pos) == Some(&b'.') {
            real = true;
            self.pos += 1;
            self.digits();
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.digits().is_empty() {
                self.pos = save;
            } else {
                real = true;
            }
        }
        let text = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        let invalid = ParseError { position: start, kind: ParseErrorKind::InvalidNumber };
        if real {
            text.parse::<f64>().map(Expr::real).map_err(|_| invalid)
        } else {
            text.parse::<i64>().map(Expr::int).map_err(|_| invalid)
        }
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        let name = core::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match name {
            "k" => return Ok(Expr::time()),
            "sin" | "cos" => {
                self.expect(b'(', "'(' after function name")?;
                let arg = self.sum()?;
                self.expect(b')', "')'")?;
                return Ok(if name == "sin" { arg.sin() } else { arg.cos() });
            }
            _ => {}
        }
        let Some(group) = VarGroup::from_prefix(name) else {
            let mut full = String::from(name);
            full.push_str(self.digits());
            return Err(ParseError { position: start, kind: ParseErrorKind::UnknownVariable(full) });
        };
        let index_at = self.pos;
        let digits = self.digits();
        if digits.is_empty() {
            return Err(ParseError { position: start, kind: ParseErrorKind::UnknownVariable(String::from(name)) });
        }
        let index: u32 = digits
            .parse()
            .map_err(|_| ParseError { position: index_at, kind: ParseErrorKind::InvalidNumber })?;
        if index == 0 {
            return Err(ParseError { position: index_at, kind: ParseErrorKind::ZeroIndex });
        }
        let mut shift = 0;
        if self.src[self.pos..].starts_with(b"_[") {
            let shift_at = self.pos;
            self.pos += 2;
            let negative = if self.eat(b'-') {
                true
            } else {
                self.eat(b'+');
                false
            };
            self.skip_ws();
            let at = self.pos;
            let digits = self.digits();
            if digits.is_empty() {
                return Err(ParseError { position: at, kind: ParseErrorKind::Expected("shift index") });
            }
            let magnitude: i32 = digits
                .parse()
                .map_err(|_| ParseError { position: at, kind: ParseErrorKind::InvalidNumber })?;
            self.expect(b']', "']'")?;
            shift = if negative { -magnitude } else { magnitude };
            if shift != 0 && matches!(group, VarGroup::State | VarGroup::DeltaState) {
                return Err(ParseError { position: shift_at, kind: ParseErrorKind::ShiftedState });
            }
        }
        Ok(Expr::var(VarRef::new(group, index, shift)))
    }
}

#[cfg(test)]
mod tests {
    use super::super::Node;
    use super::*;

    fn v(r: VarRef) -> Expr {
        Expr::var(r)
    }

    #[test]
    fn parses_sum_of_variables() {
        let e = parse("x1 + u1").unwrap();
        assert_eq!(e.node(), &Node::Add(v(VarRef::x(1)), v(VarRef::u(1, 0))));
    }

    #[test]
    fn parses_trigonometric_row() {
        let e = parse("-sin(x1 - x3) + u2").unwrap();
        let expected = Expr::from_node(Node::Add(
            Expr::from_node(Node::Neg(Expr::from_node(Node::Sin(Expr::from_node(Node::Sub(
                v(VarRef::x(1)),
                v(VarRef::x(3)),
            )))))),
            v(VarRef::u(2, 0)),
        ));
        assert_eq!(e, expected);
    }

    #[test]
    fn parses_shifted_flat_outputs_in_quotient() {
        let e = parse("(y2 - y2_[1]) / (y1 - 2*y1_[1] + y1_[2])").unwrap();
        let Node::Div(num, den) = e.node() else { panic!("expected a quotient, got {e}") };
        assert!(num.depends_on(VarRef::y(2, 1)));
        assert!(den.depends_on(VarRef::y(1, 2)));
        assert!(den.depends_on(VarRef::y(1, 1)));
    }

    #[test]
    fn exponent_forms() {
        let x = v(VarRef::x(1));
        assert_eq!(parse("x1^2").unwrap(), x.pow(2));
        assert_eq!(parse("x1^-2").unwrap(), x.pow(-2));
        assert_eq!(parse("x1^(-2)").unwrap(), x.pow(-2));
        assert_eq!(parse("-x1^2").unwrap(), x.pow(2).neg());
        assert_eq!(parse("-2^2").unwrap(), Expr::int(-4));
    }

    #[test]
    fn numbers() {
        assert_eq!(parse("3/4").unwrap().node(), &Node::Rational(super::super::Rational::new(3, 4)));
        assert_eq!(parse("2.5").unwrap(), Expr::real(2.5));
        assert_eq!(parse("1e-3").unwrap(), Expr::real(1e-3));
        assert_eq!(parse("-7").unwrap(), Expr::int(-7));
    }

    #[test]
    fn delta_and_zeta_variables() {
        assert_eq!(parse("dz2_[-3]").unwrap(), v(VarRef::new(VarGroup::DeltaZeta, 2, -3)));
        assert_eq!(parse("du1_[+2]").unwrap(), v(VarRef::new(VarGroup::DeltaInput, 1, 2)));
        assert_eq!(parse("dy1").unwrap(), v(VarRef::new(VarGroup::DeltaFlatOut, 1, 0)));
    }

    #[test]
    fn reports_errors_with_position() {
        let err = parse("x1 + w2").unwrap_err();
        assert_eq!(err.position, 5);
        assert_eq!(err.kind, ParseErrorKind::UnknownVariable("w2".into()));

        let err = parse("x1_[1] + u1").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::ShiftedState);
        assert_eq!(err.position, 2);

        assert_eq!(parse("x1 +").unwrap_err().kind, ParseErrorKind::UnexpectedEnd);
        assert_eq!(parse("x1 / 0").unwrap_err().kind, ParseErrorKind::ZeroDenominator);
        assert_eq!(parse("(x1").unwrap_err().kind, ParseErrorKind::UnexpectedEnd);
        assert_eq!(parse("x1 x2").unwrap_err().kind, ParseErrorKind::TrailingInput);
        assert_eq!(parse("x0").unwrap_err().kind, ParseErrorKind::ZeroIndex);
        assert_eq!(parse("x1 + #").unwrap_err().kind, ParseErrorKind::UnexpectedChar('#'));
        assert!(parse("x1^y1").is_err());
    }
}
