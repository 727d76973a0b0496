//! Temporal formulas and the assertions built from them.

use std::fmt;

use super::expr::{BinOp, Expr};

/// State predicate over global variable names such as `Battery1.draw`.
pub type Pred = Expr<String>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Prop(Pred),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    G(Box<Formula>),
    F(Box<Formula>),
    X(Box<Formula>),
    U(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn prop(p: Pred) -> Self {
        Formula::Prop(p)
    }

    pub fn globally(f: Formula) -> Self {
        Formula::G(Box::new(f))
    }

    pub fn finally(f: Formula) -> Self {
        Formula::F(Box::new(f))
    }

    pub fn next(f: Formula) -> Self {
        Formula::X(Box::new(f))
    }

    /// Combines two formulas, staying propositional when both sides are.
    pub fn combine(op: BinOp, l: Formula, r: Formula) -> Self {
        match (l, r) {
            (Formula::Prop(a), Formula::Prop(b)) => Formula::Prop(Expr::bin(op, a, b)),
            (l, r) => match op {
                BinOp::And => Formula::And(Box::new(l), Box::new(r)),
                BinOp::Or => Formula::Or(Box::new(l), Box::new(r)),
                _ => Formula::Implies(Box::new(l), Box::new(r)),
            },
        }
    }

    pub fn negate(f: Formula) -> Self {
        match f {
            Formula::Prop(p) => Formula::Prop(Expr::not(p)),
            other => Formula::Not(Box::new(other)),
        }
    }

    /// `G p` with `p` propositional.
    pub fn as_invariant(&self) -> Option<&Pred> {
        match self {
            Formula::G(inner) => match inner.as_ref() {
                Formula::Prop(p) => Some(p),
                _ => None,
            },
            _ => None,
        }
    }

    /// `G F q` with `q` propositional.
    pub fn as_recurrence(&self) -> Option<&Pred> {
        match self {
            Formula::G(inner) => match inner.as_ref() {
                Formula::F(q) => match q.as_ref() {
                    Formula::Prop(p) => Some(p),
                    _ => None,
                },
                _ => None,
            },
            _ => None,
        }
    }

    /// `!(p1 & X(p2 & X(...)))`: the sequence `p1, p2, ...` never occurs
    /// from an initial state.
    pub fn as_forbidden_sequence(&self) -> Option<Vec<&Pred>> {
        let Formula::Not(inner) = self else { return None };
        let mut out = Vec::new();
        let mut cur = inner.as_ref();
        loop {
            match cur {
                Formula::Prop(p) => {
                    out.push(p);
                    return Some(out);
                }
                Formula::And(l, r) => {
                    let Formula::Prop(p) = l.as_ref() else { return None };
                    let Formula::X(next) = r.as_ref() else { return None };
                    out.push(p);
                    cur = next;
                }
                _ => return None,
            }
        }
    }

    /// Builds the forbidden-sequence form for a list of step predicates.
    pub fn forbidden_sequence(steps: Vec<Pred>) -> Formula {
        let mut iter = steps.into_iter().rev();
        let mut acc = Formula::Prop(iter.next().unwrap_or(Expr::bool(true)));
        for p in iter {
            acc = Formula::And(Box::new(Formula::Prop(p)), Box::new(Formula::next(acc)));
        }
        Formula::Not(Box::new(acc))
    }

    pub fn visit_props<'a>(&'a self, f: &mut impl FnMut(&'a Pred)) {
        match self {
            Formula::Prop(p) => f(p),
            Formula::Not(a) | Formula::G(a) | Formula::F(a) | Formula::X(a) => a.visit_props(f),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::U(a, b) => {
                a.visit_props(f);
                b.visit_props(f);
            }
        }
    }

    /// Prints without the outermost pair of parentheses.
    pub fn display_top(&self) -> String {
        match self {
            Formula::Prop(p) => p.display_top(),
            Formula::And(a, b) => format!("{a} & {b}"),
            Formula::Or(a, b) => format!("{a} | {b}"),
            Formula::Implies(a, b) => format!("{a} -> {b}"),
            Formula::U(a, b) => format!("{a} U {b}"),
            other => other.to_string(),
        }
    }

    /// Rendering used in NuSMV's `-- specification ... is false` banner.
    pub fn banner(&self) -> String {
        match self {
            Formula::G(a) => format!("G {}", a.banner()),
            Formula::F(a) => format!("F {}", a.banner()),
            Formula::X(a) => format!("X {}", a.banner()),
            Formula::Prop(p) => match p {
                Expr::Bin(op, _, _) if op.is_comparison() => p.display_top(),
                other => other.to_string(),
            },
            other => format!("({other})"),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn unary(f: &mut fmt::Formatter<'_>, op: &str, a: &Formula) -> fmt::Result {
            match a {
                Formula::Prop(p) => write!(f, "{op}({})", p.display_top()),
                other => write!(f, "{op} {other}"),
            }
        }
        match self {
            Formula::Prop(p) => write!(f, "{p}"),
            Formula::Not(a) => match a.as_ref() {
                Formula::Prop(p) => write!(f, "!({})", p.display_top()),
                other => write!(f, "!({})", other.display_top()),
            },
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Or(a, b) => write!(f, "({a} | {b})"),
            Formula::Implies(a, b) => write!(f, "({a} -> {b})"),
            Formula::G(a) => unary(f, "G", a),
            Formula::F(a) => unary(f, "F", a),
            Formula::X(a) => unary(f, "X", a),
            Formula::U(a, b) => write!(f, "({a} U {b})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AssertionKind {
    /// A counterexample reveals a design error.
    ErrorDiscovery,
    /// A counterexample is a plan that reaches the goal.
    PathDiscovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Flavor {
    Safety,
    Liveness,
    Capacity,
    RepairGoal,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assertion {
    pub kind: AssertionKind,
    pub flavor: Flavor,
    pub formula: Formula,
    /// Component and rule that produced the assertion.
    pub provenance: String,
}

impl Assertion {
    pub fn error(flavor: Flavor, formula: Formula, provenance: impl Into<String>) -> Self {
        Assertion { kind: AssertionKind::ErrorDiscovery, flavor, formula, provenance: provenance.into() }
    }

    /// The `LTLSPEC` body; repair goals use one disjunct per line.
    pub fn smv_text(&self) -> String {
        if self.kind == AssertionKind::PathDiscovery {
            if let Some(p) = self.formula.as_invariant() {
                let parts: Vec<String> = p.flatten(BinOp::Or).iter().map(|d| d.display_top()).collect();
                if parts.len() > 1 {
                    return format!("G(\n  {} )", parts.join(" |\n  "));
                }
            }
        }
        self.formula.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(s: &str) -> Pred {
        Expr::r(s.to_string())
    }

    #[test]
    fn invariant_prints_in_smv_style() {
        let f = Formula::globally(Formula::prop(Expr::eq(var("CircuitBreakerEY166.state"), var("connected"))));
        assert_eq!(f.to_string(), "G(CircuitBreakerEY166.state = connected)");
        assert_eq!(f.banner(), "G CircuitBreakerEY166.state = connected");
    }

    #[test]
    fn recurrence_prints_with_g_f() {
        let f = Formula::globally(Formula::finally(Formula::prop(Expr::eq(var("C.state"), var("done")))));
        assert_eq!(f.to_string(), "G F(C.state = done)");
        assert!(f.as_recurrence().is_some());
    }

    #[test]
    fn forbidden_sequence_round_trips_through_shape() {
        let steps = vec![Expr::eq(var("b"), Expr::int(0)), Expr::eq(var("b"), Expr::int(11))];
        let f = Formula::forbidden_sequence(steps.clone());
        let got: Vec<Pred> = f.as_forbidden_sequence().unwrap().into_iter().cloned().collect();
        assert_eq!(got, steps);
        assert_eq!(f.to_string(), "!((b = 0) & X(b = 11))");
    }
}
