//! Compact test-function grammar: `x^2`, `|x|^3`, `x1^2*x2^2`, `x^4 + 2*x^2`.
//!
//! ```text
//! expr   := ['-'] term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := number | var ['^' number] | '|' var '|' ['^' number]
//! var    := 'x' [index]            (plain `x` is `x1`)
//! ```

use std::collections::BTreeMap;

use super::testfn::{Factor, Monomial, TestFunction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Var(usize),
    Pipe,
    Caret,
    Star,
    Plus,
    Minus,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '|' => {
                out.push(Tok::Pipe);
                i += 1
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1
            }
            '*' => {
                out.push(Tok::Star);
                i += 1
            }
            '+' => {
                out.push(Tok::Plus);
                i += 1
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1
            }
            'x' | 'X' => {
                i += 1;
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let idx = if start == i {
                    1
                } else {
                    chars[start..i].iter().collect::<String>().parse::<usize>().unwrap_or(0)
                };
                if idx == 0 {
                    return Err(bad(src, "variable indices start at 1"));
                }
                out.push(Tok::Var(idx));
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v = text
                    .parse::<f64>()
                    .map_err(|_| bad(src, &format!("bad number `{text}`")))?;
                out.push(Tok::Num(v));
            }
            other => return Err(bad(src, &format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

fn bad(src: &str, why: &str) -> Error {
    Error::param(format!("cannot parse test function `{src}`: {why}"))
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Tok>,
    pos: usize,
}

/// A term before it is laid out on `k` coordinates.
struct RawTerm {
    coeff: f64,
    factors: BTreeMap<usize, Factor>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn exponent(&mut self) -> Result<Option<f64>> {
        if self.peek() != Some(&Tok::Caret) {
            return Ok(None);
        }
        self.pos += 1;
        match self.next() {
            Some(Tok::Num(p)) => Ok(Some(p)),
            _ => Err(bad(self.src, "expected a number after `^`")),
        }
    }

    fn factor(&mut self, term: &mut RawTerm) -> Result<()> {
        match self.next() {
            Some(Tok::Num(v)) => {
                if self.peek() == Some(&Tok::Caret) {
                    let p = self.exponent()?.unwrap_or(1.0);
                    term.coeff *= v.powf(p);
                } else {
                    term.coeff *= v;
                }
            }
            Some(Tok::Var(j)) => {
                let p = self.exponent()?.unwrap_or(1.0);
                if !(p >= 0.0 && p.fract() == 0.0 && p <= u32::MAX as f64) {
                    return Err(bad(
                        self.src,
                        &format!("x^{p}: plain powers need a nonnegative integer exponent (use |x|^{p})"),
                    ));
                }
                let f = Factor::plain(p as u32);
                let slot = term.factors.entry(j).or_insert(Factor::ONE);
                *slot = slot.merge(f);
            }
            Some(Tok::Pipe) => {
                let j = match self.next() {
                    Some(Tok::Var(j)) => j,
                    _ => return Err(bad(self.src, "expected a variable inside `| |`")),
                };
                if self.next() != Some(Tok::Pipe) {
                    return Err(bad(self.src, "unclosed `|`"));
                }
                let p = self.exponent()?.unwrap_or(1.0);
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(bad(self.src, "exponents must be nonnegative"));
                }
                let slot = term.factors.entry(j).or_insert(Factor::ONE);
                *slot = slot.merge(Factor::abs(p));
            }
            _ => return Err(bad(self.src, "expected a number, `x` or `|x|`")),
        }
        Ok(())
    }

    fn term(&mut self, sign: f64) -> Result<RawTerm> {
        let mut term = RawTerm {
            coeff: sign,
            factors: BTreeMap::new(),
        };
        self.factor(&mut term)?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            self.factor(&mut term)?;
        }
        Ok(term)
    }

    fn expr(&mut self) -> Result<Vec<RawTerm>> {
        let mut sign = 1.0;
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            sign = -1.0;
        }
        let mut terms = vec![self.term(sign)?];
        loop {
            match self.next() {
                None => break,
                Some(Tok::Plus) => terms.push(self.term(1.0)?),
                Some(Tok::Minus) => terms.push(self.term(-1.0)?),
                Some(_) => return Err(bad(self.src, "expected `+`, `-` or `*`")),
            }
        }
        Ok(terms)
    }
}

/// Parses the compact grammar into a monomial-sum test function. The
/// dimension `k` is the largest variable index that appears (at least 1).
pub fn parse_test_function(src: &str) -> Result<TestFunction> {
    let toks = tokenize(src)?;
    if toks.is_empty() {
        return Err(bad(src, "empty expression"));
    }
    let mut p = Parser { src, toks, pos: 0 };
    let raw = p.expr()?;
    let k = raw
        .iter()
        .flat_map(|t| t.factors.keys().copied())
        .max()
        .unwrap_or(1);
    let terms = raw
        .into_iter()
        .map(|t| {
            let mut factors = vec![Factor::ONE; k];
            for (j, f) in t.factors {
                factors[j - 1] = f;
            }
            Monomial::new(t.coeff, factors)
        })
        .collect();
    TestFunction::from_monomials(k, terms)
}
