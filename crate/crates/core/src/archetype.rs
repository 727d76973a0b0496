//! Parameterized behavior templates for each component archetype, plus the
//! per-component step and output functions.
//!
//! Guards are evaluated first-match-wins with a trailing `TRUE : state` arm,
//! exactly like a NuSMV `case`. Non-deterministic alternatives (user actions,
//! faults, environment behavior) are unioned with the deterministic result.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ir::archetype::{Bound, DomainSpec, ParamBinding};
use crate::ir::{
    Archetype, ArchetypeSpec, BinOp, Choice, ChoiceKind, ChoiceTargets, Domain, EvalError, Expr, LocalExpr, LocalRef,
    Target, Transition, Value,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArchetypeError {
    #[error("{archetype} `{instance}` is missing parameter `{param}`")]
    MissingParameter { archetype: Archetype, instance: String, param: String },
    #[error("{archetype} `{instance}` does not take parameter `{param}`")]
    UnknownParameter { archetype: Archetype, instance: String, param: String },
    #[error("{archetype} `{instance}`: parameter `{param}` = {value} is outside {min}..{max}")]
    ParameterOutOfRange { archetype: Archetype, instance: String, param: String, value: i64, min: i64, max: i64 },
    #[error("{archetype} `{instance}` has an empty state domain")]
    EmptyDomain { archetype: Archetype, instance: String },
    #[error("malformed template: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("input `{0}` is not bound")]
    UnboundInput(String),
    #[error("value {0} is outside the state domain")]
    NotInDomain(Value),
    #[error(transparent)]
    Eval(EvalError),
}

/// A named, parameter-bound component machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub name: String,
    pub spec: ArchetypeSpec,
    pub period: Option<u64>,
    pub deadline: Option<u64>,
    pub final_state: Option<Value>,
    /// Block path the instance was built from, if any.
    pub origin: Option<String>,
}

impl Instance {
    pub fn new(name: impl Into<String>, spec: ArchetypeSpec) -> Self {
        Instance { name: name.into(), spec, period: None, deadline: None, final_state: None, origin: None }
    }
}

fn own(n: &str) -> LocalExpr {
    Expr::r(LocalRef::Own(n.to_owned()))
}

fn input(field: &str) -> LocalExpr {
    Expr::r(LocalRef::Input(field.to_owned()))
}

fn is(label: &str) -> LocalExpr {
    Expr::eq(own("state"), Expr::sym(label))
}

fn to(label: &str) -> Target {
    Target::Value(Value::sym(label))
}

fn stay() -> Transition {
    Transition { guard: Expr::bool(true), target: Target::Stay }
}

fn sums(field: &str) -> LocalExpr {
    Expr::r(LocalRef::OutputSum(field.to_owned()))
}

fn choice(from: Option<&str>, targets: &[&str], kind: ChoiceKind) -> Choice {
    Choice {
        from: from.map(Value::sym),
        targets: ChoiceTargets::Values(targets.iter().map(|t| Value::sym(t)).collect()),
        kind,
    }
}

struct ParamDecl {
    name: &'static str,
    default: Option<i64>,
}

fn param_decls(tag: Archetype) -> &'static [ParamDecl] {
    match tag {
        Archetype::Battery => &[ParamDecl { name: "capacity", default: None }],
        Archetype::CircuitBreaker => &[ParamDecl { name: "limit", default: None }],
        Archetype::Load => &[ParamDecl { name: "rating", default: None }],
        Archetype::MergedLoadBank => {
            &[ParamDecl { name: "drawlimit", default: None }, ParamDecl { name: "init", default: Some(0) }]
        }
        _ => &[],
    }
}

/// Instantiates the template for `tag` with the given parameter bindings.
pub fn instantiate(tag: Archetype, name: &str, params: &BTreeMap<String, i64>) -> Result<Instance, ArchetypeError> {
    let decls = param_decls(tag);
    for key in params.keys() {
        if !decls.iter().any(|d| d.name == key) {
            return Err(ArchetypeError::UnknownParameter {
                archetype: tag,
                instance: name.to_owned(),
                param: key.clone(),
            });
        }
    }
    let mut bound = Vec::new();
    for d in decls {
        let value = match (params.get(d.name), d.default) {
            (Some(v), _) => *v,
            (None, Some(v)) => v,
            (None, None) => {
                return Err(ArchetypeError::MissingParameter {
                    archetype: tag,
                    instance: name.to_owned(),
                    param: d.name.to_owned(),
                })
            }
        };
        bound.push(ParamBinding { name: d.name.to_owned(), value, min: 0, max: i64::from(i32::MAX) });
    }
    for p in &bound {
        if p.value < p.min || p.value > p.max {
            // drawlimit below zero is an empty domain rather than a range error
            if tag == Archetype::MergedLoadBank && p.name == "drawlimit" && p.value < 0 {
                return Err(ArchetypeError::EmptyDomain { archetype: tag, instance: name.to_owned() });
            }
            return Err(ArchetypeError::ParameterOutOfRange {
                archetype: tag,
                instance: name.to_owned(),
                param: p.name.clone(),
                value: p.value,
                min: p.min,
                max: p.max,
            });
        }
    }
    let spec = template(tag, bound)?;
    if spec.domain.is_empty() {
        return Err(ArchetypeError::EmptyDomain { archetype: tag, instance: name.to_owned() });
    }
    validate_spec(&spec).map_err(ArchetypeError::Malformed)?;
    Ok(Instance::new(name, spec))
}

fn electrical(tag: Archetype, states: &[&'static str], initial: &str, errors: &[&str]) -> ArchetypeSpec {
    ArchetypeSpec {
        tag,
        var: "state".into(),
        domain_spec: DomainSpec::Enum(states.to_vec()),
        domain: Domain::enumeration(states),
        initial: vec![Value::sym(initial)],
        error_states: errors.iter().map(|e| Value::sym(e)).collect(),
        params: Vec::new(),
        inputs: vec![("supplyingPower".into(), Domain::Bool)],
        upstream: true,
        downstream: None,
        defines: Vec::new(),
        transitions: vec![stay()],
        choices: Vec::new(),
    }
}

fn template(tag: Archetype, params: Vec<ParamBinding>) -> Result<ArchetypeSpec, ArchetypeError> {
    let mut s = match tag {
        Archetype::Battery => {
            let mut s = electrical(tag, &["nominal", "dead", "underRepair"], "nominal", &["dead"]);
            s.upstream = false;
            s.inputs.clear();
            s.downstream = Some("draw".into());
            s.defines = vec![("supplyingPower".into(), is("nominal")), ("draw".into(), sums("draw"))];
            let zero_draw = || Expr::eq(own("draw"), Expr::int(0));
            s.transitions = vec![
                Transition { guard: Expr::bin(BinOp::Gt, own("draw"), own("capacity")), target: to("dead") },
                Transition { guard: Expr::and(is("dead"), zero_draw()), target: to("underRepair") },
                Transition { guard: Expr::and(is("underRepair"), zero_draw()), target: to("nominal") },
                stay(),
            ];
            s
        }
        Archetype::CircuitBreaker => {
            let mut s = electrical(tag, &["connected", "broken"], "connected", &["broken"]);
            s.downstream = Some("draw".into());
            s.defines = vec![
                ("supplyingPower".into(), Expr::and(is("connected"), input("supplyingPower"))),
                ("draw".into(), Expr::Case(vec![(is("connected"), sums("draw")), (Expr::bool(true), Expr::int(0))])),
            ];
            s.transitions = vec![
                Transition { guard: Expr::bin(BinOp::Gt, own("draw"), own("limit")), target: to("broken") },
                stay(),
            ];
            s
        }
        Archetype::Relay => {
            let mut s = electrical(
                tag,
                &["open", "closed", "stuckOpen", "stuckClosed"],
                "closed",
                &["stuckOpen", "stuckClosed"],
            );
            s.downstream = Some("draw".into());
            let conducting = || Expr::or(is("closed"), is("stuckClosed"));
            s.defines = vec![
                ("supplyingPower".into(), Expr::and(conducting(), input("supplyingPower"))),
                ("draw".into(), Expr::Case(vec![(conducting(), sums("draw")), (Expr::bool(true), Expr::int(0))])),
            ];
            s.choices = vec![
                choice(Some("open"), &["closed"], ChoiceKind::UserAction),
                choice(Some("closed"), &["open"], ChoiceKind::UserAction),
                choice(Some("open"), &["stuckOpen"], ChoiceKind::Fault),
                choice(Some("closed"), &["stuckClosed"], ChoiceKind::Fault),
            ];
            s
        }
        Archetype::Inverter => {
            let mut s = electrical(tag, &["nominal", "failed"], "nominal", &["failed"]);
            s.downstream = Some("draw".into());
            s.defines = vec![
                ("supplyingPower".into(), Expr::and(is("nominal"), input("supplyingPower"))),
                ("draw".into(), Expr::Case(vec![(is("nominal"), sums("draw")), (Expr::bool(true), Expr::int(0))])),
            ];
            s.choices = vec![choice(Some("nominal"), &["failed"], ChoiceKind::Fault)];
            s
        }
        Archetype::Actuator | Archetype::Load => {
            let mut s = electrical(tag, &["nominal", "nopower", "faultyResistance"], "nominal", &["faultyResistance"]);
            let (nominal, faulty) = if tag == Archetype::Actuator {
                (Expr::int(1), Expr::int(2))
            } else {
                (own("rating"), Expr::bin(BinOp::Add, own("rating"), Expr::int(1)))
            };
            s.defines = vec![(
                "draw".into(),
                Expr::Case(vec![
                    (Expr::or(Expr::not(input("supplyingPower")), is("nopower")), Expr::int(0)),
                    (is("nominal"), nominal),
                    (is("faultyResistance"), faulty),
                ]),
            )];
            s.choices = vec![
                choice(None, &["nominal", "nopower"], ChoiceKind::Environment),
                choice(None, &["faultyResistance"], ChoiceKind::Fault),
            ];
            s
        }
        Archetype::Sensor => {
            let mut s = electrical(tag, &["nominal", "faulty"], "nominal", &["faulty"]);
            s.defines = vec![("observed".into(), Expr::and(is("nominal"), input("supplyingPower")))];
            s.choices = vec![choice(Some("nominal"), &["faulty"], ChoiceKind::Fault)];
            s
        }
        Archetype::MergedLoadBank => {
            let limit = params.iter().find(|p| p.name == "drawlimit").map(|p| p.value).unwrap_or(0);
            let init = params.iter().find(|p| p.name == "init").map(|p| p.value).unwrap_or(0);
            let domain = Domain::Range(0, limit);
            if !domain.contains(Value::Int(init)) {
                return Err(ArchetypeError::Malformed(format!("init {init} outside 0 .. {limit}")));
            }
            ArchetypeSpec {
                tag,
                var: "draw".into(),
                domain_spec: DomainSpec::Range(Bound::Lit(0), Bound::Param("drawlimit".into())),
                domain,
                initial: vec![Value::Int(init)],
                error_states: Vec::new(),
                params: Vec::new(),
                inputs: vec![("supplyingPower".into(), Domain::Bool)],
                upstream: true,
                downstream: None,
                defines: Vec::new(),
                transitions: vec![stay()],
                choices: vec![Choice { from: None, targets: ChoiceTargets::All, kind: ChoiceKind::Environment }],
            }
        }
    };
    // `init` only seeds the initial value; it is not a module parameter.
    s.params = params.into_iter().filter(|p| p.name != "init").collect();
    Ok(s)
}

/// The unparameterized template for `tag`, used to tell which parts of an
/// instance deviate from the archetype (initial state, removed faults).
pub fn template_defaults(tag: Archetype) -> ArchetypeSpec {
    template(tag, Vec::new()).expect("templates without parameters are well formed")
}

/// A merged-subsystem bank whose variable ranges over an explicit domain.
pub fn merged_bank(domain: Domain, initial: Vec<Value>) -> ArchetypeSpec {
    let (domain_spec, params) = match &domain {
        Domain::Range(0, hi) => (
            DomainSpec::Range(Bound::Lit(0), Bound::Param("drawlimit".into())),
            vec![ParamBinding { name: "drawlimit".into(), value: *hi, min: 0, max: i64::from(i32::MAX) }],
        ),
        other => (DomainSpec::Explicit(other.clone()), Vec::new()),
    };
    ArchetypeSpec {
        tag: Archetype::MergedLoadBank,
        var: "draw".into(),
        domain_spec,
        domain,
        initial,
        error_states: Vec::new(),
        params,
        inputs: vec![("supplyingPower".into(), Domain::Bool)],
        upstream: true,
        downstream: None,
        defines: Vec::new(),
        transitions: vec![stay()],
        choices: vec![Choice { from: None, targets: ChoiceTargets::All, kind: ChoiceKind::Environment }],
    }
}

/// Checks the template invariants: initial and error states inside the
/// domain, and a trailing unconditional self-loop.
pub fn validate_spec(spec: &ArchetypeSpec) -> Result<(), String> {
    if spec.initial.is_empty() {
        return Err("no initial value".into());
    }
    for v in spec.initial.iter().chain(&spec.error_states) {
        if !spec.domain.contains(*v) {
            return Err(format!("{v} is not in the domain {}", spec.domain));
        }
    }
    match spec.transitions.last() {
        Some(Transition { guard, target: Target::Stay }) if guard.is_true() => Ok(()),
        _ => Err("transition list must end with `TRUE : state`".into()),
    }
}

/// Evaluates a module-local expression for a component in isolation.
///
/// `inputs` is keyed by `input.<field>` and `output<k>.<field>`.
pub fn eval_local(
    spec: &ArchetypeSpec,
    current: Value,
    inputs: &BTreeMap<String, Value>,
    expr: &LocalExpr,
) -> Result<Value, StepError> {
    fn go(
        spec: &ArchetypeSpec,
        current: Value,
        inputs: &BTreeMap<String, Value>,
        expr: &LocalExpr,
        depth: usize,
    ) -> Result<Value, StepError> {
        let mut unbound = None;
        let r = expr.eval(&mut |r: &LocalRef| {
            let res = lookup(spec, current, inputs, r, depth);
            if let Err(StepError::UnboundInput(n)) = &res {
                unbound = Some(n.clone());
                return Err(EvalError::Unbound(n.clone()));
            }
            res.map_err(|e| match e {
                StepError::Eval(e) => e,
                other => EvalError::TypeMismatch(other.to_string()),
            })
        });
        match (r, unbound) {
            (Ok(v), _) => Ok(v),
            (Err(_), Some(n)) => Err(StepError::UnboundInput(n)),
            (Err(e), None) => Err(StepError::Eval(e)),
        }
    }

    fn lookup(
        spec: &ArchetypeSpec,
        current: Value,
        inputs: &BTreeMap<String, Value>,
        r: &LocalRef,
        depth: usize,
    ) -> Result<Value, StepError> {
        match r {
            LocalRef::Own(n) if *n == spec.var => Ok(current),
            LocalRef::Own(n) => {
                if let Some(e) = spec.define(n) {
                    if depth > spec.defines.len() {
                        return Err(StepError::Eval(EvalError::TypeMismatch(format!("define cycle through `{n}`"))));
                    }
                    return go(spec, current, inputs, e, depth + 1);
                }
                spec.param(n).map(Value::Int).ok_or_else(|| StepError::Eval(EvalError::Unbound(n.clone())))
            }
            LocalRef::Input(f) => {
                let key = format!("input.{f}");
                inputs.get(&key).copied().ok_or(StepError::UnboundInput(key))
            }
            LocalRef::Output(i, f) => {
                let key = format!("output{i}.{f}");
                inputs.get(&key).copied().ok_or(StepError::UnboundInput(key))
            }
            LocalRef::OutputSum(f) => {
                let mut total = 0i64;
                for k in 1.. {
                    match inputs.get(&format!("output{k}.{f}")) {
                        Some(Value::Int(v)) => total += v,
                        Some(other) => {
                            return Err(StepError::Eval(EvalError::TypeMismatch(format!("summing {other}"))))
                        }
                        None => break,
                    }
                }
                Ok(Value::Int(total))
            }
        }
    }

    go(spec, current, inputs, expr, 0)
}

/// Successor values of one component, honoring only the choice kinds
/// accepted by `allow`.
pub fn step_filtered(
    spec: &ArchetypeSpec,
    current: Value,
    inputs: &BTreeMap<String, Value>,
    allow: impl Fn(ChoiceKind) -> bool,
) -> Result<Vec<Value>, StepError> {
    if !spec.domain.contains(current) {
        return Err(StepError::NotInDomain(current));
    }
    let mut next = Vec::new();
    for t in &spec.transitions {
        let fires = eval_local(spec, current, inputs, &t.guard)?;
        if fires == Value::Bool(true) {
            next.push(match &t.target {
                Target::Stay => current,
                Target::Value(v) => *v,
            });
            break;
        }
    }
    next.extend(spec.choice_targets(current, allow));
    let mut idx: Vec<usize> = next.iter().filter_map(|v| spec.domain.index_of(*v)).collect();
    idx.sort_unstable();
    idx.dedup();
    Ok(idx.into_iter().map(|i| spec.domain.value(i)).collect())
}

/// Successor values of one component with every choice enabled.
pub fn step(spec: &ArchetypeSpec, current: Value, inputs: &BTreeMap<String, Value>) -> Result<Vec<Value>, StepError> {
    step_filtered(spec, current, inputs, |_| true)
}

/// Values of every defined output.
pub fn output(
    spec: &ArchetypeSpec,
    current: Value,
    inputs: &BTreeMap<String, Value>,
) -> Result<BTreeMap<String, Value>, StepError> {
    spec.defines.iter().map(|(n, e)| Ok((n.clone(), eval_local(spec, current, inputs, e)?))).collect()
}
