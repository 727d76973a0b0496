//! Parser for predicate and temporal-formula text.
//!
//! Accepts NuSMV LTL surface syntax plus the Unicode operators `≠ ≤ ≥ ¬ ∧ ∨ →`.
//! `G`, `F`, `X` and `U` are reserved as temporal operators.

use thiserror::Error;

use super::expr::{BinOp, Expr};
use super::formula::{Formula, Pred};
use super::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at column {column}: {message}")]
pub struct ParseError {
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            // trailing SMV comment
            break;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let n = text.parse().map_err(|_| ParseError { column: col, message: "integer out of range".into() })?;
            out.push((Tok::Int(n), col));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '.' | '$' | '#')) {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let op: Option<(&'static str, usize)> = match two.as_str() {
            "!=" => Some(("!=", 2)),
            "<=" => Some(("<=", 2)),
            ">=" => Some((">=", 2)),
            "->" => Some(("->", 2)),
            "==" => Some(("=", 2)),
            "&&" => Some(("&", 2)),
            "||" => Some(("|", 2)),
            _ => match c {
                '=' => Some(("=", 1)),
                '<' => Some(("<", 1)),
                '>' => Some((">", 1)),
                '!' | '¬' => Some(("!", 1)),
                '&' | '∧' => Some(("&", 1)),
                '|' | '∨' => Some(("|", 1)),
                '+' => Some(("+", 1)),
                '-' => Some(("-", 1)),
                '*' => Some(("*", 1)),
                '≠' => Some(("!=", 1)),
                '≤' => Some(("<=", 1)),
                '≥' => Some((">=", 1)),
                '→' => Some(("->", 1)),
                _ => None,
            },
        };
        match (c, op) {
            ('(', _) => {
                out.push((Tok::LParen, col));
                i += 1;
            }
            (')', _) => {
                out.push((Tok::RParen, col));
                i += 1;
            }
            (_, Some((op, n))) => {
                out.push((Tok::Op(op), col));
                i += n;
            }
            _ => return Err(ParseError { column: col, message: format!("unexpected character `{c}`") }),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| *c).unwrap_or(self.end)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { column: self.column(), message: message.into() })
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_ident(&mut self, word: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.or()?;
        if self.eat_op("->") {
            let rhs = self.formula()?;
            return Ok(Formula::combine(BinOp::Implies, lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.and()?;
        while self.eat_op("|") {
            let rhs = self.and()?;
            lhs = Formula::combine(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.until()?;
        while self.eat_op("&") {
            let rhs = self.until()?;
            lhs = Formula::combine(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.unary()?;
        if self.eat_ident("U") {
            let rhs = self.unary()?;
            return Ok(Formula::U(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.eat_op("!") {
            return Ok(Formula::negate(self.unary()?));
        }
        for (word, ctor) in
            [("G", Formula::globally as fn(Formula) -> Formula), ("F", Formula::finally), ("X", Formula::next)]
        {
            if self.eat_ident(word) {
                return Ok(ctor(self.unary()?));
            }
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Formula, ParseError> {
        let lhs = self.additive()?;
        for (text, op) in [
            ("=", BinOp::Eq),
            ("!=", BinOp::Ne),
            ("<=", BinOp::Le),
            (">=", BinOp::Ge),
            ("<", BinOp::Lt),
            (">", BinOp::Gt),
        ] {
            if self.eat_op(text) {
                let rhs = self.additive()?;
                return Ok(Formula::Prop(Expr::bin(op, self.prop(lhs)?, self.prop(rhs)?)));
            }
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = if self.eat_op("+") {
                BinOp::Add
            } else if self.eat_op("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.multiplicative()?;
            lhs = Formula::Prop(Expr::bin(op, self.prop(lhs)?, self.prop(rhs)?));
        }
    }

    fn multiplicative(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.atom()?;
        loop {
            let op = if self.eat_op("*") {
                BinOp::Mul
            } else if self.eat_ident("mod") {
                BinOp::Mod
            } else {
                return Ok(lhs);
            };
            let rhs = self.atom()?;
            lhs = Formula::Prop(Expr::bin(op, self.prop(lhs)?, self.prop(rhs)?));
        }
    }

    fn prop(&self, f: Formula) -> Result<Pred, ParseError> {
        match f {
            Formula::Prop(p) => Ok(p),
            _ => self.err("temporal operator inside an arithmetic or comparison operand"),
        }
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return self.err("unexpected end of input");
        };
        self.pos += 1;
        match tok {
            Tok::Int(n) => Ok(Formula::Prop(Expr::int(n))),
            Tok::Op("-") => match self.peek().cloned() {
                Some(Tok::Int(n)) => {
                    self.pos += 1;
                    Ok(Formula::Prop(Expr::int(-n)))
                }
                _ => self.err("expected integer after unary minus"),
            },
            Tok::Ident(w) => match w.as_str() {
                "TRUE" | "true" => Ok(Formula::Prop(Expr::Const(Value::Bool(true)))),
                "FALSE" | "false" => Ok(Formula::Prop(Expr::Const(Value::Bool(false)))),
                "G" | "F" | "X" | "U" | "mod" => {
                    self.pos -= 1;
                    self.err(format!("unexpected keyword `{w}`"))
                }
                _ => Ok(Formula::Prop(Expr::Ref(w))),
            },
            Tok::LParen => {
                let inner = self.formula()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(inner)
            }
            Tok::RParen => {
                self.pos -= 1;
                self.err("unexpected `)`")
            }
            Tok::Op(o) => {
                self.pos -= 1;
                self.err(format!("unexpected operator `{o}`"))
            }
        }
    }
}

/// Parses a temporal formula; an optional leading `LTLSPEC` is ignored.
pub fn parse_formula(src: &str) -> Result<Formula, ParseError> {
    let trimmed = src.trim_start();
    let body = trimmed.strip_prefix("LTLSPEC").unwrap_or(trimmed);
    let toks = tokenize(body)?;
    let mut p = Parser { end: body.chars().count() + 1, toks, pos: 0 };
    if p.toks.is_empty() {
        return p.err("empty formula");
    }
    let f = p.formula()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(f)
}

/// Parses a state predicate (no temporal operators).
pub fn parse_predicate(src: &str) -> Result<Pred, ParseError> {
    match parse_formula(src)? {
        Formula::Prop(p) => Ok(p),
        _ => Err(ParseError { column: 1, message: "temporal operators are not allowed in a state predicate".into() }),
    }
}
