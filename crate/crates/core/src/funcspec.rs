//! Parser for the coefficient mini-language.
//!
//! ```text
//! spec  := atom | "sum:(" spec ")+(" spec ")"
//! atom  := "sgn" | "id" | "const:" num | "tanh" | "sin"
//!        | "steps:" num ":" num ("," num ":" num)*
//! ```

use crate::error::{Error, Result};
use crate::gclass::GFunction;

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            position: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        if self.eat(token) {
            Ok(())
        } else {
            self.err(format!("expected `{token}`"))
        }
    }

    fn number(&mut self) -> Result<f64> {
        let rest = self.rest();
        let mut end = 0;
        for (i, c) in rest.char_indices() {
            let sign_ok =
                (c == '+' || c == '-') && (i == 0 || matches!(rest.as_bytes()[i - 1], b'e' | b'E'));
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || sign_ok {
                end = i + c.len_utf8();
            } else {
                break;
            }
        }
        if end == 0 {
            return self.err("expected a number");
        }
        match rest[..end].parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos += end;
                Ok(v)
            }
            _ => self.err(format!("invalid number `{}`", &rest[..end])),
        }
    }

    fn spec(&mut self) -> Result<GFunction> {
        if self.eat("sum:(") {
            let a = self.spec()?;
            self.expect(")+(")?;
            let b = self.spec()?;
            self.expect(")")?;
            return Ok(a.sum(&b));
        }
        if self.eat("steps:") {
            return self.steps();
        }
        if self.eat("const:") {
            return Ok(GFunction::constant(self.number()?));
        }
        for (name, make) in [
            ("sgn", GFunction::sgn as fn() -> GFunction),
            ("id", GFunction::identity),
            ("tanh", GFunction::tanh),
            ("sin", GFunction::sin),
        ] {
            if self.eat(name) {
                return Ok(make());
            }
        }
        self.err("expected one of sgn, id, const:, tanh, sin, steps:, sum:(")
    }

    fn steps(&mut self) -> Result<GFunction> {
        let mut jumps: Vec<(f64, f64)> = Vec::new();
        loop {
            let at_pos = self.pos;
            let a = self.number()?;
            self.expect(":")?;
            let d = self.number()?;
            if let Some(&(prev, _)) = jumps.last() {
                if !(a > prev) {
                    return Err(Error::Parse {
                        position: at_pos,
                        message: format!("step locations must increase ({a} after {prev})"),
                    });
                }
            }
            jumps.push((a, d));
            if !self.eat(",") {
                break;
            }
        }
        GFunction::steps(jumps)
    }
}

/// Parse a coefficient spec such as `sgn`, `const:2` or `sum:(tanh)+(steps:0:2)`.
pub fn parse_function_spec(text: &str) -> Result<GFunction> {
    let mut p = Parser { src: text, pos: 0 };
    let f = p.spec()?;
    if p.pos != text.len() {
        return p.err("unexpected trailing input");
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms() {
        let s = parse_function_spec("sgn").unwrap();
        assert_eq!(s.base(), -1.0);
        assert_eq!(s.jumps(), &[(0.0, 2.0)]);
        let c = parse_function_spec("const:1").unwrap();
        assert_eq!(c.evaluate(-3.0), 1.0);
        assert_eq!(
            parse_function_spec("const:-2.5e-1").unwrap().evaluate(0.0),
            -0.25
        );
        assert_eq!(parse_function_spec("id").unwrap().evaluate(1.5), 1.5);
        assert!((parse_function_spec("sin").unwrap().evaluate(1.0) - 1f64.sin()).abs() < 1e-16);
    }

    #[test]
    fn sums_and_steps() {
        let f = parse_function_spec("sum:(tanh)+(steps:0:2)").unwrap();
        assert!((f.evaluate(0.5) - (0.5f64.tanh() + 2.0)).abs() < 1e-15);
        assert!((f.evaluate(-0.5) - (-0.5f64).tanh()).abs() < 1e-15);
        let g = parse_function_spec("steps:-1:0.5,2:-1").unwrap();
        assert_eq!(g.jumps(), &[(-1.0, 0.5), (2.0, -1.0)]);
        let h = parse_function_spec("sum:(sum:(sgn)+(const:1))+(id)").unwrap();
        assert_eq!(h.evaluate(2.0), 4.0);
        assert_eq!(h.evaluate(-2.0), -2.0);
    }

    #[test]
    fn errors_carry_positions() {
        match parse_function_spec("steps:1:1,0:1") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 10),
            other => panic!("{other:?}"),
        }
        match parse_function_spec("sum:(sgn)+(foo)") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 11),
            other => panic!("{other:?}"),
        }
        match parse_function_spec("sgnx") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_function_spec("const:").is_err());
        assert!(parse_function_spec("").is_err());
    }
}
