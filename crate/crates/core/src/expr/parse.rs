//! Infix formula parser used by system declaration files.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' UINT)?
//! atom    := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Functions: `sin cos exp abs` (one argument), `min max` (two). `pi` is a
//! constant. Identifiers must be declared in the pool's variable table.

use super::{ExprId, ExprPool};
use crate::error::{Error, Result};

pub fn parse_infix(pool: &mut ExprPool, src: &str) -> Result<ExprId> {
    let mut p = Parser { src: src.as_bytes(), pos: 0, pool };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    pool: &'a mut ExprPool,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Parse { column: self.pos + 1, message: message.to_string() }
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

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<ExprId> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = self.pool.add(lhs, rhs);
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = self.pool.sub(lhs, rhs);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<ExprId> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.unary()?;
                lhs = self.pool.mul(lhs, rhs);
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                lhs = self.pool.div(lhs, rhs);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<ExprId> {
        if self.eat(b'-') {
            let a = self.unary()?;
            return Ok(self.pool.neg(a));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<ExprId> {
        let base = self.atom()?;
        if self.eat(b'^') {
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("exponent must be a non-negative integer"));
            }
            let n: u32 = std::str::from_utf8(&self.src[start..self.pos])
                .expect("ascii digits")
                .parse()
                .map_err(|_| self.error("exponent too large"))?;
            return Ok(self.pool.powi(base, n));
        }
        Ok(base)
    }

    fn number(&mut self) -> Result<ExprId> {
        let start = self.pos;
        let s = self.src;
        while self.pos < s.len() && (s[self.pos].is_ascii_digit() || s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < s.len() && (s[self.pos] == b'+' || s[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < s.len() && s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if digits == self.pos {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).expect("ascii");
        let value: f64 = text.parse().map_err(|_| Error::Parse {
            column: start + 1,
            message: format!("invalid number `{text}`"),
        })?;
        Ok(self.pool.constant(value))
    }

    fn atom(&mut self) -> Result<ExprId> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                if self.peek() == Some(b'(') {
                    self.pos += 1;
                    self.call(name, start)
                } else if name == "pi" {
                    Ok(self.pool.constant(std::f64::consts::PI))
                } else {
                    let idx = self.pool.var_index(name).ok_or_else(|| Error::Parse {
                        column: start + 1,
                        message: format!("unknown variable `{name}`"),
                    })?;
                    self.pool.var(idx)
                }
            }
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn call(&mut self, name: &str, start: usize) -> Result<ExprId> {
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        self.expect(b')')?;
        let arity = match name {
            "sin" | "cos" | "exp" | "abs" => 1,
            "min" | "max" => 2,
            _ => {
                return Err(Error::Parse {
                    column: start + 1,
                    message: format!("unknown function `{name}`"),
                })
            }
        };
        if args.len() != arity {
            return Err(Error::Parse {
                column: start + 1,
                message: format!("`{name}` takes {arity} argument(s), got {}", args.len()),
            });
        }
        let p = &mut *self.pool;
        Ok(match name {
            "sin" => p.sin(args[0]),
            "cos" => p.cos(args[0]),
            "exp" => p.exp(args[0]),
            "abs" => p.abs(args[0]),
            "min" => p.min(args[0], args[1]),
            _ => p.max(args[0], args[1]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_functions() {
        let mut p = ExprPool::with_vars(&["x", "y"]);
        let e = parse_infix(&mut p, "-x^2 + 2*y*min(x, 0) - cos(pi) / 2").unwrap();
        let v = p.eval_point(e, &[-1.5, 2.0]).unwrap();
        assert!((v - (-2.25 + 4.0 * -1.5 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn scientific_numbers() {
        let mut p = ExprPool::new();
        let e = parse_infix(&mut p, "1.5e-3 * 2E2").unwrap();
        assert!((p.eval_point(e, &[]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_columns() {
        let mut p = ExprPool::with_vars(&["x"]);
        match parse_infix(&mut p, "x + z") {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 5),
            other => panic!("{other:?}"),
        }
        assert!(parse_infix(&mut p, "x^0.5").is_err());
        assert!(parse_infix(&mut p, "tanh(x)").is_err());
        assert!(parse_infix(&mut p, "min(x)").is_err());
        assert!(parse_infix(&mut p, "(x").is_err());
        assert!(parse_infix(&mut p, "x )").is_err());
    }
}
