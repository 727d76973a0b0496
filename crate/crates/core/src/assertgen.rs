//! Error-discovery and path-discovery assertion generation.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::archetype::Instance;
use crate::composer::{ComposeError, CompositeMachine, PredError};
use crate::ir::{parse_formula, Archetype, Assertion, AssertionKind, BinOp, Expr, Flavor, Formula, Pred, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssertGenError {
    #[error("`{0}` has a deadline but the model has no timing, so there is no clock")]
    MissingClock(String),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("`{state}` is not an error state of `{instance}` (error states: {allowed})")]
    InvalidErrorState { instance: String, state: String, allowed: String },
    #[error(transparent)]
    Pred(#[from] PredError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
}

fn var(name: String) -> Pred {
    Expr::Ref(name)
}

fn state_is(inst: &Instance, op: BinOp, v: Value) -> Pred {
    Expr::bin(op, var(format!("{}.{}", inst.name, inst.spec.var)), Expr::Const(v))
}

/// `G(x.state != e)` for every error state, plus `G(x.state = connected)`
/// for breakers.
pub fn gen_safety(m: &CompositeMachine) -> Vec<Assertion> {
    let mut out = Vec::new();
    for inst in &m.instances {
        for &e in &inst.spec.error_states {
            out.push(Assertion::error(
                Flavor::Safety,
                Formula::globally(Formula::prop(state_is(inst, BinOp::Ne, e))),
                format!("{}: error state {e}", inst.name),
            ));
        }
        if inst.spec.tag == Archetype::CircuitBreaker {
            out.push(Assertion::error(
                Flavor::Safety,
                Formula::globally(Formula::prop(state_is(inst, BinOp::Eq, Value::sym("connected")))),
                format!("{}: breaker stays connected", inst.name),
            ));
        }
    }
    out
}

/// `G F(x.state = final)` for periodic instances with a final state, and a
/// clock-phase form for each deadline.
pub fn gen_liveness(m: &CompositeMachine) -> Result<Vec<Assertion>, AssertGenError> {
    let mut out = Vec::new();
    for inst in &m.instances {
        if inst.deadline.is_some() && m.clock.is_none() {
            return Err(AssertGenError::MissingClock(inst.name.clone()));
        }
        let Some(fin) = inst.final_state else { continue };
        if inst.period.is_none() {
            continue;
        }
        let reached = state_is(inst, BinOp::Eq, fin);
        out.push(Assertion::error(
            Flavor::Liveness,
            Formula::globally(Formula::finally(Formula::prop(reached.clone()))),
            format!("{}: periodic, final state {fin}", inst.name),
        ));
        if let (Some(d), Some(c)) = (inst.deadline, m.clock) {
            let phase = (d % c.cycle) as i64;
            let at = Expr::eq(var("clock".into()), Expr::int(phase));
            out.push(Assertion::error(
                Flavor::Liveness,
                Formula::globally(Formula::prop(Expr::bin(BinOp::Implies, at, reached))),
                format!("{}: deadline {d}", inst.name),
            ));
        }
    }
    Ok(out)
}

/// `G(chan.count <= capacity)` for every channel.
pub fn gen_capacity(m: &CompositeMachine) -> Vec<Assertion> {
    m.channels
        .iter()
        .map(|ch| {
            Assertion::error(
                Flavor::Capacity,
                Formula::globally(Formula::prop(Expr::bin(
                    BinOp::Le,
                    var(format!("{}.count", ch.name)),
                    Expr::int(i64::from(ch.capacity)),
                ))),
                format!("{}: capacity {}", ch.name, ch.capacity),
            )
        })
        .collect()
}

/// Safety, liveness and capacity assertions, in that order.
pub fn gen_auto(m: &CompositeMachine) -> Result<Vec<Assertion>, AssertGenError> {
    let mut out = gen_safety(m);
    out.extend(gen_liveness(m)?);
    out.extend(gen_capacity(m));
    Ok(out)
}

/// Starts the listed instances in their error states and claims the goal is
/// never reached; a counterexample is a repair plan.
pub fn gen_path_discovery(
    m: &CompositeMachine,
    failures: &BTreeMap<String, String>,
    goal: &Pred,
) -> Result<(CompositeMachine, Assertion), AssertGenError> {
    let mut instances = m.instances.clone();
    for (name, state) in failures {
        let i = m.instance_index(name).ok_or_else(|| AssertGenError::UnknownInstance(name.clone()))?;
        let spec = &mut instances[i].spec;
        let v = Value::parse(state);
        if !spec.is_error(v) {
            return Err(AssertGenError::InvalidErrorState {
                instance: name.clone(),
                state: state.clone(),
                allowed: spec.error_states.iter().map(Value::to_string).collect::<Vec<_>>().join(", "),
            });
        }
        spec.initial = vec![v];
    }
    let modified = m.with_instances(instances)?;
    modified.compile_pred(goal)?;
    let provenance = if failures.is_empty() {
        "repair goal".to_string()
    } else {
        let f: Vec<String> = failures.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("repair goal after {}", f.join(", "))
    };
    let a = Assertion {
        kind: AssertionKind::PathDiscovery,
        flavor: Flavor::RepairGoal,
        formula: Formula::globally(Formula::prop(goal.negated())),
        provenance,
    };
    Ok((modified, a))
}

/// Checks that every variable of every assertion resolves on `m`.
pub fn type_check(m: &CompositeMachine, asserts: &[Assertion]) -> Result<(), PredError> {
    for a in asserts {
        let mut res = Ok(());
        a.formula.visit_props(&mut |p| {
            if res.is_ok() {
                res = m.compile_pred(p).map(|_| ());
            }
        });
        res?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("assertion file line {line}: {message}")]
pub struct AssertFileError {
    pub line: usize,
    pub message: String,
}

/// Writes assertions as `-- provenance` / `LTLSPEC formula` pairs.
pub fn write_assertions(asserts: &[Assertion]) -> String {
    let mut out = String::new();
    for a in asserts {
        out.push_str(&format!("-- {}\nLTLSPEC {}\n\n", a.provenance, a.smv_text()));
    }
    out
}

fn flavor_of(f: &Formula) -> Flavor {
    if f.as_recurrence().is_some() {
        return Flavor::Liveness;
    }
    let mut capacity = false;
    f.visit_props(&mut |p| {
        p.visit_refs(&mut |r| capacity |= r.ends_with(".count"));
    });
    if capacity {
        Flavor::Capacity
    } else {
        Flavor::Safety
    }
}

/// Reads an assertion file. Each `LTLSPEC` runs until the next one; the
/// comment lines just above it become its provenance.
pub fn parse_assertions(text: &str) -> Result<Vec<Assertion>, AssertFileError> {
    let mut out = Vec::new();
    let mut comments: Vec<String> = Vec::new();
    let mut current: Option<(usize, Vec<String>, String)> = None;
    let finish = |cur: Option<(usize, Vec<String>, String)>, out: &mut Vec<Assertion>| -> Result<(), AssertFileError> {
        if let Some((line, provenance, body)) = cur {
            let formula = parse_formula(&body).map_err(|e| AssertFileError { line, message: e.to_string() })?;
            let provenance = if provenance.is_empty() { format!("line {line}") } else { provenance.join(" ") };
            out.push(Assertion::error(flavor_of(&formula), formula, provenance));
        }
        Ok(())
    };
    for (n, raw) in text.lines().enumerate() {
        let code = raw.split("--").next().unwrap_or("").trim();
        if code.is_empty() {
            if let Some(c) = raw.trim().strip_prefix("--") {
                if current.is_none() || !c.trim().is_empty() {
                    comments.push(c.trim().to_string());
                }
            }
            continue;
        }
        if let Some(rest) = code.strip_prefix("LTLSPEC") {
            finish(current.take(), &mut out)?;
            let provenance = std::mem::take(&mut comments).into_iter().filter(|c| !c.is_empty()).collect();
            current = Some((n + 1, provenance, rest.trim().to_string()));
            continue;
        }
        match current.as_mut() {
            Some((_, _, body)) => {
                comments.clear();
                body.push(' ');
                body.push_str(code);
            }
            None => return Err(AssertFileError { line: n + 1, message: format!("expected `LTLSPEC`, got `{code}`") }),
        }
    }
    finish(current, &mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archetype::instantiate;
    use crate::composer::{compose, Connection};
    use crate::ir::parse_predicate;

    fn inst(tag: Archetype, name: &str, params: &[(&str, i64)]) -> Instance {
        let p = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        instantiate(tag, name, &p).unwrap()
    }

    fn machine() -> CompositeMachine {
        compose(
            vec![
                inst(Archetype::Battery, "Battery1", &[("capacity", 4)]),
                inst(Archetype::CircuitBreaker, "CircuitBreakerEY166", &[("limit", 10)]),
            ],
            vec![Connection::power("Battery1", "CircuitBreakerEY166")],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn safety_matches_reference_shapes() {
        let texts: Vec<String> = gen_safety(&machine()).iter().map(|a| a.smv_text()).collect();
        assert!(texts.contains(&"G(CircuitBreakerEY166.state = connected)".to_string()));
        assert!(texts.contains(&"G(Battery1.state != dead)".to_string()));
        assert!(texts.contains(&"G(CircuitBreakerEY166.state != broken)".to_string()));
        type_check(&machine(), &gen_safety(&machine())).unwrap();
    }

    #[test]
    fn no_error_states_no_assertions() {
        let m = compose(vec![inst(Archetype::MergedLoadBank, "B", &[("drawlimit", 3)])], vec![], vec![]).unwrap();
        assert!(gen_safety(&m).is_empty());
        assert!(gen_liveness(&m).unwrap().is_empty());
        assert!(gen_capacity(&m).is_empty());
    }

    #[test]
    fn liveness_and_deadline() {
        let mut b = inst(Archetype::Battery, "C", &[("capacity", 4)]);
        b.period = Some(100);
        b.final_state = Some(Value::sym("nominal"));
        b.deadline = Some(200);
        let mut other = inst(Archetype::Sensor, "S", &[]);
        other.period = Some(300);
        let m = compose(vec![b, other], vec![], vec![]).unwrap();
        assert_eq!(m.clock.unwrap().tick, 100);
        let texts: Vec<String> = gen_liveness(&m).unwrap().iter().map(|a| a.smv_text()).collect();
        assert_eq!(texts, vec!["G F(C.state = nominal)", "G((clock = 200) -> (C.state = nominal))"]);
    }

    #[test]
    fn deadline_without_clock_is_an_error() {
        let mut b = inst(Archetype::Battery, "C", &[("capacity", 4)]);
        b.deadline = Some(200);
        let m = compose(vec![b], vec![], vec![]).unwrap();
        assert_eq!(gen_liveness(&m), Err(AssertGenError::MissingClock("C".into())));
    }

    #[test]
    fn path_discovery_negates_goal() {
        let goal =
            parse_predicate("CircuitBreakerEY166.state = connected & Battery1.state = nominal & Battery1.draw <= 2")
                .unwrap();
        let failures = BTreeMap::from([("Battery1".to_string(), "dead".to_string())]);
        let (m, a) = gen_path_discovery(&machine(), &failures, &goal).unwrap();
        assert_eq!(
            a.smv_text(),
            "G(\n  CircuitBreakerEY166.state != connected |\n  Battery1.state != nominal |\n  Battery1.draw > 2 )"
        );
        let b = m.instance_index("Battery1").unwrap();
        assert_eq!(m.instances[b].spec.initial, vec![Value::sym("dead")]);
    }

    #[test]
    fn path_discovery_errors() {
        let goal = parse_predicate("Battery1.state = nominal").unwrap();
        let bad = BTreeMap::from([("Battery1".to_string(), "nominal".to_string())]);
        assert!(matches!(gen_path_discovery(&machine(), &bad, &goal), Err(AssertGenError::InvalidErrorState { .. })));
        let unknown = BTreeMap::from([("Nope".to_string(), "dead".to_string())]);
        assert!(matches!(gen_path_discovery(&machine(), &unknown, &goal), Err(AssertGenError::UnknownInstance(_))));
    }

    #[test]
    fn assertion_files_round_trip() {
        let m = compose(
            vec![
                inst(Archetype::Battery, "Battery1", &[("capacity", 4)]),
                inst(Archetype::CircuitBreaker, "Breaker", &[("limit", 10)]),
            ],
            vec![Connection::power("Battery1", "Breaker")],
            vec![],
        )
        .unwrap();
        let asserts = gen_auto(&m).unwrap();
        let text = write_assertions(&asserts);
        let back = parse_assertions(&text).unwrap();
        assert_eq!(write_assertions(&back), text);
        assert!(back.iter().zip(&asserts).all(|(a, b)| a.flavor == b.flavor));
    }

    #[test]
    fn assertion_file_shapes() {
        let text = "-- a\n-- b\nLTLSPEC G F(x = 1)\nLTLSPEC G(\n  c.count <= 3 |\n  y = 2 ) -- trailing\n";
        let got = parse_assertions(text).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].provenance, "a b");
        assert_eq!(got[0].flavor, Flavor::Liveness);
        assert_eq!(got[1].flavor, Flavor::Capacity);
        assert_eq!(got[1].provenance, "line 4");
        assert_eq!(parse_assertions("G(x = 1)").unwrap_err().line, 1);
        assert_eq!(parse_assertions("LTLSPEC G((x = \n").unwrap_err().line, 1);
    }
}
