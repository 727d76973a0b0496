//! Expressions over a pluggable reference type.
//!
//! Archetype guards and defined outputs use module-local references,
//! assertions use global variable names, and the composer compiles both
//! down to label indices. Evaluation mirrors the NuSMV `case` semantics:
//! the first arm whose guard holds wins, and a case with no matching arm
//! is an error.

use std::fmt;

use thiserror::Error;

use super::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    And,
    Or,
    Implies,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Mod,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Implies => "->",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Mod => "mod",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }

    /// Logical complement of a comparison operator.
    pub fn complement(self) -> Option<BinOp> {
        Some(match self {
            BinOp::Eq => BinOp::Ne,
            BinOp::Ne => BinOp::Eq,
            BinOp::Lt => BinOp::Ge,
            BinOp::Le => BinOp::Gt,
            BinOp::Gt => BinOp::Le,
            BinOp::Ge => BinOp::Lt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr<R> {
    Const(Value),
    Ref(R),
    Not(Box<Expr<R>>),
    Bin(BinOp, Box<Expr<R>>, Box<Expr<R>>),
    Case(Vec<(Expr<R>, Expr<R>)>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("no case arm matched")]
    NoCaseMatched,
    #[error("unbound reference `{0}`")]
    Unbound(String),
    #[error("arithmetic overflow")]
    Overflow,
}

impl<R> Expr<R> {
    pub fn int(i: i64) -> Self {
        Expr::Const(Value::Int(i))
    }

    pub fn bool(b: bool) -> Self {
        Expr::Const(Value::Bool(b))
    }

    pub fn sym(s: &str) -> Self {
        Expr::Const(Value::sym(s))
    }

    pub fn r(r: R) -> Self {
        Expr::Ref(r)
    }

    pub fn bin(op: BinOp, l: Expr<R>, r: Expr<R>) -> Self {
        Expr::Bin(op, Box::new(l), Box::new(r))
    }

    pub fn and(l: Expr<R>, r: Expr<R>) -> Self {
        Self::bin(BinOp::And, l, r)
    }

    pub fn or(l: Expr<R>, r: Expr<R>) -> Self {
        Self::bin(BinOp::Or, l, r)
    }

    pub fn eq(l: Expr<R>, r: Expr<R>) -> Self {
        Self::bin(BinOp::Eq, l, r)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: Expr<R>) -> Self {
        Expr::Not(Box::new(e))
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Expr::Const(Value::Bool(true)))
    }

    /// Left-nested conjunction; `TRUE` when empty.
    pub fn conjunction(parts: impl IntoIterator<Item = Expr<R>>) -> Self {
        parts.into_iter().reduce(Self::and).unwrap_or(Expr::bool(true))
    }

    pub fn disjunction(parts: impl IntoIterator<Item = Expr<R>>) -> Self {
        parts.into_iter().reduce(Self::or).unwrap_or(Expr::bool(false))
    }

    /// Flattens a left- or right-nested chain of one boolean operator.
    pub fn flatten(&self, op: BinOp) -> Vec<&Expr<R>> {
        let mut out = Vec::new();
        fn walk<'a, R>(e: &'a Expr<R>, op: BinOp, out: &mut Vec<&'a Expr<R>>) {
            match e {
                Expr::Bin(o, l, r) if *o == op => {
                    walk(l, op, out);
                    walk(r, op, out);
                }
                _ => out.push(e),
            }
        }
        walk(self, op, &mut out);
        out
    }

    pub fn visit_refs<'a>(&'a self, f: &mut impl FnMut(&'a R)) {
        match self {
            Expr::Const(_) => {}
            Expr::Ref(r) => f(r),
            Expr::Not(e) => e.visit_refs(f),
            Expr::Bin(_, l, r) => {
                l.visit_refs(f);
                r.visit_refs(f);
            }
            Expr::Case(arms) => {
                for (g, v) in arms {
                    g.visit_refs(f);
                    v.visit_refs(f);
                }
            }
        }
    }

    /// Rewrites every reference into an expression of another reference type.
    pub fn try_map<S, E>(&self, f: &mut impl FnMut(&R) -> Result<Expr<S>, E>) -> Result<Expr<S>, E> {
        Ok(match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::Ref(r) => f(r)?,
            Expr::Not(e) => Expr::Not(Box::new(e.try_map(f)?)),
            Expr::Bin(op, l, r) => Expr::Bin(*op, Box::new(l.try_map(f)?), Box::new(r.try_map(f)?)),
            Expr::Case(arms) => {
                Expr::Case(arms.iter().map(|(g, v)| Ok((g.try_map(f)?, v.try_map(f)?))).collect::<Result<_, E>>()?)
            }
        })
    }

    pub fn eval(&self, lookup: &mut impl FnMut(&R) -> Result<Value, EvalError>) -> Result<Value, EvalError> {
        match self {
            Expr::Const(v) => Ok(*v),
            Expr::Ref(r) => lookup(r),
            Expr::Not(e) => match e.eval(lookup)? {
                Value::Bool(b) => Ok(Value::Bool(!b)),
                other => Err(EvalError::TypeMismatch(format!("`!` applied to {other}"))),
            },
            Expr::Bin(op, l, r) => {
                // Short-circuit booleans so guards can protect partial operands.
                match op {
                    BinOp::And | BinOp::Or | BinOp::Implies => {
                        let lv = expect_bool(l.eval(lookup)?, *op)?;
                        let short = match op {
                            BinOp::And => (!lv).then_some(false),
                            BinOp::Or => lv.then_some(true),
                            _ => (!lv).then_some(true),
                        };
                        if let Some(b) = short {
                            return Ok(Value::Bool(b));
                        }
                        Ok(Value::Bool(expect_bool(r.eval(lookup)?, *op)?))
                    }
                    _ => apply(*op, l.eval(lookup)?, r.eval(lookup)?),
                }
            }
            Expr::Case(arms) => {
                for (g, v) in arms {
                    if expect_bool(g.eval(lookup)?, BinOp::And)? {
                        return v.eval(lookup);
                    }
                }
                Err(EvalError::NoCaseMatched)
            }
        }
    }
}

impl<R: Clone> Expr<R> {
    /// Pushes a negation inward (negation normal form over comparisons).
    pub fn negated(&self) -> Expr<R> {
        match self {
            Expr::Const(Value::Bool(b)) => Expr::bool(!b),
            Expr::Not(e) => (**e).clone(),
            Expr::Bin(BinOp::And, l, r) => Expr::or(l.negated(), r.negated()),
            Expr::Bin(BinOp::Or, l, r) => Expr::and(l.negated(), r.negated()),
            Expr::Bin(BinOp::Implies, l, r) => Expr::and((**l).clone(), r.negated()),
            Expr::Bin(op, l, r) if op.is_comparison() => {
                Expr::Bin(op.complement().expect("comparison"), l.clone(), r.clone())
            }
            other => Expr::not(other.clone()),
        }
    }
}

fn expect_bool(v: Value, op: BinOp) -> Result<bool, EvalError> {
    v.as_bool().ok_or_else(|| EvalError::TypeMismatch(format!("`{}` expects booleans, got {v}", op.symbol())))
}

fn apply(op: BinOp, l: Value, r: Value) -> Result<Value, EvalError> {
    use Value::*;
    let mismatch = || EvalError::TypeMismatch(format!("{l} {} {r}", op.symbol()));
    match op {
        BinOp::Eq => same_kind(l, r).then_some(Bool(l == r)).ok_or_else(mismatch),
        BinOp::Ne => same_kind(l, r).then_some(Bool(l != r)).ok_or_else(mismatch),
        _ => {
            let (a, b) = match (l, r) {
                (Int(a), Int(b)) => (a, b),
                _ => return Err(mismatch()),
            };
            Ok(match op {
                BinOp::Lt => Bool(a < b),
                BinOp::Le => Bool(a <= b),
                BinOp::Gt => Bool(a > b),
                BinOp::Ge => Bool(a >= b),
                BinOp::Add => Int(a.checked_add(b).ok_or(EvalError::Overflow)?),
                BinOp::Sub => Int(a.checked_sub(b).ok_or(EvalError::Overflow)?),
                BinOp::Mul => Int(a.checked_mul(b).ok_or(EvalError::Overflow)?),
                BinOp::Mod => {
                    if b == 0 {
                        return Err(EvalError::Overflow);
                    }
                    Int(a.rem_euclid(b))
                }
                _ => unreachable!("boolean operators are handled by the caller"),
            })
        }
    }
}

fn same_kind(a: Value, b: Value) -> bool {
    matches!((a, b), (Value::Bool(_), Value::Bool(_)) | (Value::Int(_), Value::Int(_)) | (Value::Sym(_), Value::Sym(_)))
}

impl<R: fmt::Display> Expr<R> {
    /// Prints without the outermost pair of parentheses.
    pub fn display_top(&self) -> String {
        match self {
            Expr::Bin(op, l, r) => format!("{l} {} {r}", op.symbol()),
            other => other.to_string(),
        }
    }
}

/// Fully parenthesised NuSMV surface syntax: `(a op b)`, `!(a)`.
impl<R: fmt::Display> fmt::Display for Expr<R> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Ref(r) => write!(f, "{r}"),
            Expr::Not(e) => write!(f, "!({})", e.display_top()),
            Expr::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Case(arms) => {
                f.write_str("case ")?;
                for (g, v) in arms {
                    write!(f, "{g} : {v}; ")?;
                }
                f.write_str("esac")
            }
        }
    }
}
