//! Infix arithmetic over named measurements.
//!
//! Identifiers may contain `.` and `:` so that native event names such as
//! `IDQ_UOPS_NOT_DELIVERED.CYCLES_0_UOPS_DELIV.CORE` can be written bare.
//! Names with other punctuation (`cache-misses`) are written in double quotes.
//!
//! Every occurrence of a name is an independent operand: `(x + x) / x` does
//! not know that its three operands are the same counter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Measurement, PropagationPolicy, StatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Name(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

/// Lookup of bound values during evaluation.
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<Measurement>;
}

impl Bindings for BTreeMap<String, Measurement> {
    fn lookup(&self, name: &str) -> Option<Measurement> {
        self.get(name).cloned()
    }
}

impl Bindings for std::collections::HashMap<String, Measurement> {
    fn lookup(&self, name: &str) -> Option<Measurement> {
        self.get(name).cloned()
    }
}

impl<F> Bindings for F
where
    F: Fn(&str) -> Option<Measurement>,
{
    fn lookup(&self, name: &str) -> Option<Measurement> {
        self(name)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, StatError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(StatError::Parse(format!(
                "unexpected token {:?} in {src:?}",
                p.tokens[p.pos]
            )));
        }
        Ok(e)
    }

    pub fn name(n: impl Into<String>) -> Expr {
        Expr::Name(n.into())
    }

    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    /// Free names in first-occurrence order, deduplicated.
    pub fn names(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        self.walk_names(&mut |n| {
            if seen.insert(n.to_string()) {
                out.push(n.to_string());
            }
        });
        out
    }

    fn walk_names(&self, f: &mut dyn FnMut(&str)) {
        match self {
            Expr::Const(_) => {}
            Expr::Name(n) => f(n),
            Expr::Neg(e) => e.walk_names(f),
            Expr::Binary(_, l, r) => {
                l.walk_names(f);
                r.walk_names(f);
            }
        }
    }

    /// Folds the propagation rules over the tree, one step per node,
    /// left operand before right.
    pub fn eval(
        &self,
        bindings: &dyn Bindings,
        policy: PropagationPolicy,
    ) -> Result<Measurement, StatError> {
        match self {
            Expr::Const(c) => Ok(Measurement::exact(*c)),
            Expr::Name(n) => {
                let mut m = bindings
                    .lookup(n)
                    .ok_or_else(|| StatError::UnboundName(n.clone()))?;
                m.label = None;
                Ok(m)
            }
            Expr::Neg(e) => Ok(e.eval(bindings, policy)?.scale(-1.0)),
            Expr::Binary(op, l, r) => {
                let a = l.eval(bindings, policy)?;
                let b = r.eval(bindings, policy)?;
                match op {
                    BinOp::Add => a.add(&b, policy),
                    BinOp::Sub => a.sub(&b, policy),
                    BinOp::Mul => a.mul(&b, policy),
                    BinOp::Div => a.div(&b, policy),
                }
            }
        }
    }
}

/// Parses and evaluates in one call.
pub fn eval_expression(
    src: &str,
    bindings: &dyn Bindings,
    policy: PropagationPolicy,
) -> Result<Measurement, StatError> {
    Expr::parse(src)?.eval(bindings, policy)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Name(n) if is_bare_ident(n) => write!(f, "{n}"),
            Expr::Name(n) => write!(f, "\"{n}\""),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Binary(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({l} {sym} {r})")
            }
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == ':'
}

fn is_bare_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if ident_start(c)) && chars.all(ident_char)
}

fn tokenize(src: &str) -> Result<Vec<Token>, StatError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '(' {
            out.push(Token::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Token::RParen);
            i += 1;
        } else if "+-*/".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else if c == '"' {
            let start = i + 1;
            let end = chars[start..]
                .iter()
                .position(|&c| c == '"')
                .map(|p| start + p)
                .ok_or_else(|| StatError::Parse(format!("unterminated quote in {src:?}")))?;
            out.push(Token::Ident(chars[start..end].iter().collect()));
            i = end + 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent
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
                .map_err(|_| StatError::Parse(format!("bad number {text:?}")))?;
            out.push(Token::Num(v));
        } else if ident_start(c) {
            let start = i;
            while i < chars.len() && ident_char(chars[i]) {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            return Err(StatError::Parse(format!(
                "unexpected character {c:?} in {src:?}"
            )));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr, StatError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, StatError> {
        let mut lhs = self.factor()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.factor()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, StatError> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Expr::Const(v)),
            Some(Token::Ident(n)) => Ok(Expr::Name(n)),
            Some(Token::Op('-')) => Ok(Expr::Neg(Box::new(self.factor()?))),
            Some(Token::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(e),
                    _ => Err(StatError::Parse("missing ')'".into())),
                }
            }
            Some(t) => Err(StatError::Parse(format!("unexpected token {t:?}"))),
            None => Err(StatError::Parse("unexpected end of expression".into())),
        }
    }
}
