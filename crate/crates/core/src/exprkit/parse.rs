//! Recursive-descent parser.
//!
//! Grammar (lowest to highest precedence): `+ -`, `* /`, unary `-`, `^`
//! (right-associative, integer exponents only), then atoms: numbers
//! (integers or decimals, read exactly), identifiers, `i`, calls
//! `sin cos exp sqrt`, and parenthesised expressions.

use super::{ExactNum, ExprError, Func, ScalarExpr};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

pub fn parse(src: &str) -> Result<ScalarExpr, ExprError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

fn fold_binary(a: &ScalarExpr, b: &ScalarExpr, op: u8) -> Option<ScalarExpr> {
    let (x, y) = (a.as_const()?, b.as_const()?);
    let v = match op {
        b'+' => x.add(y),
        b'-' => x.sub(y),
        b'*' => x.mul(y),
        b'/' => x.div(y)?,
        _ => return None,
    };
    Some(ScalarExpr::constant(v))
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Syntax { pos: self.pos, msg: msg.to_string() }
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

    fn expr(&mut self) -> Result<ScalarExpr, ExprError> {
        let mut terms = vec![self.term()?];
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let t = self.term()?;
            let t = if c == b'-' { -t } else { t };
            let last = terms.last().unwrap();
            match fold_binary(last, &t, b'+') {
                Some(v) => *terms.last_mut().unwrap() = v,
                None => terms.push(t),
            }
        }
        Ok(ScalarExpr::sum(terms))
    }

    fn term(&mut self) -> Result<ScalarExpr, ExprError> {
        let mut acc = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            if let Some(v) = fold_binary(&acc, &rhs, c) {
                acc = v;
                continue;
            }
            acc = if c == b'*' { ScalarExpr::product(vec![acc, rhs]) } else { ScalarExpr::quotient(acc, rhs) };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<ScalarExpr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(-self.unary()?);
        }
        if self.peek() == Some(b'+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<ScalarExpr, ExprError> {
        let base = self.primary()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        let at = self.pos;
        let exp = self.unary()?;
        let n = match exp.as_const().and_then(|c| c.as_integer()) {
            Some(n) => n,
            None => return Err(ExprError::Syntax { pos: at, msg: "exponent must be an integer constant".into() }),
        };
        if let Some(c) = base.as_const() {
            if let Some(v) = c.powi(n) {
                return Ok(ScalarExpr::constant(v));
            }
        }
        Ok(ScalarExpr::pow(base, n))
    }

    fn primary(&mut self) -> Result<ScalarExpr, ExprError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<ScalarExpr, ExprError> {
        let start = self.pos;
        let mut int_part = BigInt::zero();
        let mut frac = BigRational::zero();
        let mut digits = 0;
        while let Some(&c) = self.src.get(self.pos) {
            if !c.is_ascii_digit() {
                break;
            }
            int_part = int_part * 10 + (c - b'0') as i32;
            self.pos += 1;
            digits += 1;
        }
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            let mut scale = BigRational::one();
            while let Some(&c) = self.src.get(self.pos) {
                if !c.is_ascii_digit() {
                    break;
                }
                scale /= BigRational::from_integer(10.into());
                frac += &scale * BigRational::from_integer(((c - b'0') as i32).into());
                self.pos += 1;
                digits += 1;
            }
        }
        if digits == 0 {
            return Err(ExprError::Syntax { pos: start, msg: "malformed number".into() });
        }
        if matches!(self.src.get(self.pos), Some(c) if c.is_ascii_alphabetic()) {
            return Err(self.err("identifier directly after number"));
        }
        Ok(ScalarExpr::constant(ExactNum::real(BigRational::from_integer(int_part) + frac)))
    }

    fn ident(&mut self) -> Result<ScalarExpr, ExprError> {
        let start = self.pos;
        while let Some(&c) = self.src.get(self.pos) {
            if c.is_ascii_alphanumeric() || c == b'_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if let Some(f) = Func::from_name(name) {
            if self.peek() != Some(b'(') {
                return Err(self.err("expected `(` after function name"));
            }
            self.pos += 1;
            let arg = self.expr()?;
            if self.peek() != Some(b')') {
                return Err(self.err("expected `)`"));
            }
            self.pos += 1;
            return Ok(ScalarExpr::func(f, arg));
        }
        if name == "i" {
            return Ok(ScalarExpr::imag_unit());
        }
        Ok(ScalarExpr::var(name))
    }
}

impl std::str::FromStr for ScalarExpr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

