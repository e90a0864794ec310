//! Tiny expression grammar for parameter-sequence rules such as
//! `d = sqrt(n)` or `lambda = 1 - loglog n / (log n)^2`.
//!
//! Grammar (public contract):
//!
//! ```text
//! expr    := term  (('+' | '-') term)*
//! term    := power (('*' | '×' | '/') power)*
//! power   := unary ('^' power)?            // right-associative
//! unary   := '-' unary | primary
//! primary := number | 'n' | '(' expr ')' | func unary
//! func    := 'log' | 'sqrt' | 'loglog'
//! ```
//!
//! `log` is the natural logarithm and `loglog n = log(log n)`. Function
//! application without parentheses binds to the following unary term, so
//! `log n^2` parses as `log(n^2)`; write `(log n)^2` for the square of the
//! logarithm. Numbers accept decimals and scientific notation.

use crate::{Error, Result};
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var, // the single variable `n`
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Log(Box<Expr>),
    LogLog(Box<Expr>),
    Sqrt(Box<Expr>),
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        let tokens = lex(text)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Parse(format!(
                "unexpected trailing input near token {:?}",
                p.tokens[p.pos]
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, n: f64) -> Result<f64> {
        let v = self.eval_raw(n);
        if !v.is_finite() {
            return Err(Error::Domain(format!(
                "expression `{self}` is not finite at n = {n} (got {v})"
            )));
        }
        Ok(v)
    }

    fn eval_raw(&self, n: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var => n,
            Expr::Neg(a) => -a.eval_raw(n),
            Expr::Add(a, b) => a.eval_raw(n) + b.eval_raw(n),
            Expr::Sub(a, b) => a.eval_raw(n) - b.eval_raw(n),
            Expr::Mul(a, b) => a.eval_raw(n) * b.eval_raw(n),
            Expr::Div(a, b) => a.eval_raw(n) / b.eval_raw(n),
            Expr::Pow(a, b) => a.eval_raw(n).powf(b.eval_raw(n)),
            Expr::Log(a) => a.eval_raw(n).ln(),
            Expr::LogLog(a) => a.eval_raw(n).ln().ln(),
            Expr::Sqrt(a) => a.eval_raw(n).sqrt(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var => write!(f, "n"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Log(a) => write!(f, "log({a})"),
            Expr::LogLog(a) => write!(f, "loglog({a})"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Var,
    Log,
    LogLog,
    Sqrt,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '-' | '−' => {
                out.push(Tok::Minus);
                i += 1;
            }
            '*' | '×' => {
                out.push(Tok::Star);
                i += 1;
            }
            '/' => {
                out.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                out.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                // optional exponent
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
                let s: String = chars[start..i].iter().collect();
                let v: f64 = s
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number `{s}`")))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(match s.as_str() {
                    "n" => Tok::Var,
                    "log" => Tok::Log,
                    "loglog" => Tok::LogLog,
                    "sqrt" => Tok::Sqrt,
                    other => {
                        return Err(Error::Parse(format!("unknown identifier `{other}`")));
                    }
                });
            }
            other => {
                return Err(Error::Parse(format!("unexpected character `{other}`")));
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.power()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.power()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.power()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if let Some(Tok::Caret) = self.peek() {
            self.pos += 1;
            let rhs = self.power()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(rhs)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some(Tok::Minus) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Var) => Ok(Expr::Var),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(Error::Parse("missing closing parenthesis".into())),
                }
            }
            Some(Tok::Log) => Ok(Expr::Log(Box::new(self.unary()?))),
            Some(Tok::LogLog) => Ok(Expr::LogLog(Box::new(self.unary()?))),
            Some(Tok::Sqrt) => Ok(Expr::Sqrt(Box::new(self.unary()?))),
            other => Err(Error::Parse(format!("unexpected token {other:?}"))),
        }
    }
}

/// A parameter-sequence rule: evaluable formulas for `d(n)` and
/// `lambda(n)`. `d` rounds to the nearest integer and clamps to `[1, n]`.
#[derive(Debug, Clone, Serialize)]
pub struct ParamRule {
    #[serde(serialize_with = "ser_expr")]
    pub d: Expr,
    #[serde(serialize_with = "ser_expr")]
    pub lambda: Expr,
}

fn ser_expr<S: serde::Serializer>(e: &Expr, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&e.to_string())
}

/// Strips an optional `name =` prefix before parsing.
fn parse_rule_side(text: &str, name: &str) -> Result<Expr> {
    let t = text.trim();
    let body = match t.split_once('=') {
        Some((lhs, rhs)) if lhs.trim() == name => rhs,
        Some((lhs, _)) => {
            return Err(Error::Parse(format!(
                "rule must assign `{name}`, found `{}`",
                lhs.trim()
            )));
        }
        None => t,
    };
    Expr::parse(body)
}

impl ParamRule {
    /// Parses `"d = <expr>"` and `"lambda = <expr>"` (the prefixes are
    /// optional; bare expressions are accepted).
    pub fn parse(d_rule: &str, lambda_rule: &str) -> Result<Self> {
        Ok(ParamRule {
            d: parse_rule_side(d_rule, "d")?,
            lambda: parse_rule_side(lambda_rule, "lambda")?,
        })
    }

    pub fn d_at(&self, n: u64) -> Result<u64> {
        let raw = self.d.eval(n as f64)?;
        if raw.is_nan() {
            return Err(Error::Domain("d rule evaluated to NaN".into()));
        }
        Ok((raw.round() as i64).clamp(1, n as i64) as u64)
    }

    pub fn lambda_at(&self, n: u64) -> Result<f64> {
        let v = self.lambda.eval(n as f64)?;
        if !(v > 0.0) {
            return Err(Error::Domain(format!(
                "lambda rule evaluated to {v} at n = {n}; must be positive"
            )));
        }
        Ok(v)
    }
}
