//! Scripted discrete-time execution and trace replay.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::composer::{CExpr, CompositeMachine, PredError, StateVec, VarKind};
use crate::ir::{Domain, EvalError, Expr, Trace, TraceKind, Value};
use crate::reducer::MergeCandidate;

/// Step number (1-based; step 1 is the initial state) to label assignments.
pub type Script = BTreeMap<usize, BTreeMap<String, Value>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resolution {
    /// Fail when the script and defaults leave more than one successor.
    #[default]
    Strict,
    /// Take the first remaining successor in lexicographic order.
    First,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("script: {0}")]
    Script(String),
    #[error("script mentions unknown variable `{0}`")]
    UnknownLabel(String),
    #[error("no successor at step {step} satisfies the script")]
    Unsatisfiable { step: usize },
    #[error("step {step} leaves a choice open for {}", .vars.join(", "))]
    UnresolvedChoice { step: usize, vars: Vec<String> },
    #[error("state 1.{} is not a legal successor: {reason}", .step + 1)]
    IllegalStep { step: usize, reason: String },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pred(#[from] PredError),
}

/// Parses `{"1": {"Battery1.state": "dead"}, "3": {...}}`.
pub fn parse_script(text: &str) -> Result<Script, SimError> {
    let raw: BTreeMap<String, BTreeMap<String, serde_json::Value>> =
        serde_json::from_str(text).map_err(|e| SimError::Script(e.to_string()))?;
    let mut out = Script::new();
    for (step, row) in raw {
        let n: usize = step.parse().map_err(|_| SimError::Script(format!("step `{step}` is not a number")))?;
        if n == 0 {
            return Err(SimError::Script("steps are numbered from 1".into()));
        }
        let mut assigns = BTreeMap::new();
        for (label, v) in row {
            let value = match v {
                serde_json::Value::Bool(b) => Value::Bool(b),
                serde_json::Value::Number(x) => {
                    Value::Int(x.as_i64().ok_or_else(|| SimError::Script(format!("`{x}` is not an integer")))?)
                }
                serde_json::Value::String(s) => Value::parse(&s),
                other => return Err(SimError::Script(format!("unsupported value `{other}` for `{label}`"))),
            };
            assigns.insert(label, value);
        }
        out.insert(n, assigns);
    }
    Ok(out)
}

pub fn write_script(script: &Script) -> String {
    let json: BTreeMap<String, BTreeMap<&String, serde_json::Value>> = script
        .iter()
        .map(|(k, row)| {
            let row = row
                .iter()
                .map(|(l, v)| {
                    let j = match v {
                        Value::Bool(b) => serde_json::Value::Bool(*b),
                        Value::Int(i) => serde_json::Value::from(*i),
                        Value::Sym(s) => serde_json::Value::String(s.to_string()),
                    };
                    (l, j)
                })
                .collect();
            (k.to_string(), row)
        })
        .collect();
    serde_json::to_string_pretty(&json).expect("script serializes") + "\n"
}

fn constraints(m: &CompositeMachine, row: Option<&BTreeMap<String, Value>>) -> Result<Vec<(usize, Value)>, SimError> {
    let Some(row) = row else { return Ok(Vec::new()) };
    row.iter()
        .map(|(l, v)| m.label_index(l).map(|i| (i, *v)).ok_or_else(|| SimError::UnknownLabel(l.clone())))
        .collect()
}

fn distance(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Initial state preferred when the script is silent: each variable's
/// first initial value, with free supply inputs present.
fn default_initial(m: &CompositeMachine, first: &[u32]) -> StateVec {
    m.vars
        .iter()
        .zip(first)
        .map(|(v, &x)| match (v.kind, &v.domain) {
            (VarKind::Free(_), Domain::Bool) => v.domain.index_of(Value::Bool(true)).unwrap_or(0) as u32,
            _ => x,
        })
        .collect()
}

fn pick(
    m: &CompositeMachine,
    step: usize,
    candidates: Vec<StateVec>,
    wanted: &[(usize, Value)],
    preferred: &[u32],
    mode: Resolution,
) -> Result<StateVec, SimError> {
    let mut ok = Vec::new();
    for c in candidates {
        let vals = m.valuation(&c)?;
        if wanted.iter().all(|(l, v)| vals[*l] == *v) {
            ok.push(c);
        }
    }
    let best = ok.iter().map(|c| distance(c, preferred)).min().ok_or(SimError::Unsatisfiable { step })?;
    ok.retain(|c| distance(c, preferred) == best);
    if ok.len() > 1 && mode == Resolution::Strict {
        let vars = (0..m.vars.len())
            .filter(|&v| ok.iter().any(|c| c[v] != ok[0][v]))
            .map(|v| m.vars[v].name.clone())
            .collect();
        return Err(SimError::UnresolvedChoice { step, vars });
    }
    Ok(ok.swap_remove(0))
}

/// Runs `horizon` steps. Unscripted choices keep their current value.
pub fn simulate(m: &CompositeMachine, script: &Script, horizon: usize) -> Result<Trace, SimError> {
    simulate_with(m, script, horizon, Resolution::Strict)
}

pub fn simulate_with(
    m: &CompositeMachine,
    script: &Script,
    horizon: usize,
    mode: Resolution,
) -> Result<Trace, SimError> {
    for row in script.values() {
        constraints(m, Some(row))?;
    }
    let init = m.initial_states();
    let Some(first) = init.first() else { return Err(SimError::Unsatisfiable { step: 1 }) };
    let preferred = default_initial(m, first);
    let mut states = vec![pick(m, 1, init, &constraints(m, script.get(&1))?, &preferred, mode)?];
    for step in 2..=horizon + 1 {
        let cur = states.last().expect("nonempty");
        let vals = m.valuation(cur)?;
        let preferred = m.default_successor(cur, &vals)?;
        let next = m.successors(cur)?;
        states.push(pick(m, step, next, &constraints(m, script.get(&step))?, &preferred, mode)?);
    }
    Ok(m.to_trace(TraceKind::Simulation, &states)?)
}

/// The choices embedded in `t`: every choice variable at every step, and
/// the full first state.
pub fn script_from_trace(m: &CompositeMachine, t: &Trace) -> Script {
    let choice = m.choice_vars();
    let mut script = Script::new();
    for k in 0..t.len() {
        let mut row = BTreeMap::new();
        for (v, var) in m.vars.iter().enumerate() {
            if k == 0 || choice.contains(&v) {
                if let Some(val) = t.value(k, &var.name) {
                    row.insert(var.name.clone(), val);
                }
            }
        }
        script.insert(k + 1, row);
    }
    script
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    /// 0-based trace step.
    pub step: usize,
    pub label: String,
    pub expected: Value,
    pub actual: Value,
}

impl std::fmt::Display for Mismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "state 1.{}: {} is {} in the trace but {} in replay",
            self.step + 1,
            self.label,
            self.expected,
            self.actual
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicationReport {
    pub steps: usize,
    /// Labels compared per step.
    pub compared: usize,
    pub mismatches: Vec<Mismatch>,
    /// The simulator's own run.
    pub replayed: Trace,
}

impl ReplicationReport {
    pub fn agrees(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn legality(m: &CompositeMachine, t: &Trace) -> Result<Vec<StateVec>, SimError> {
    let mut states: Vec<StateVec> = Vec::with_capacity(t.len());
    for k in 0..t.len() {
        let s = m.state_of(t, k).ok_or_else(|| SimError::IllegalStep {
            step: k,
            reason: "a state variable is missing or out of its domain".into(),
        })?;
        let legal = match states.last() {
            None => m.initial_states().contains(&s),
            Some(prev) => m.successors(prev)?.contains(&s),
        };
        if !legal {
            let reason = if k == 0 { "not an initial state" } else { "not a successor of the previous state" };
            return Err(SimError::IllegalStep { step: k, reason: reason.into() });
        }
        states.push(s);
    }
    if let (Some(l), Some(last)) = (t.loop_start, states.last()) {
        if !m.successors(last)?.contains(&states[l]) {
            return Err(SimError::IllegalStep {
                step: t.len(),
                reason: format!("loop back to 1.{} is not a transition", l + 1),
            });
        }
    }
    Ok(states)
}

/// Checks `t` step by step, then re-runs it in the simulator from the
/// choices it contains and compares every label it shares with `m`.
pub fn replay(m: &CompositeMachine, t: &Trace) -> Result<ReplicationReport, SimError> {
    legality(m, t)?;
    let horizon = t.len().saturating_sub(1);
    let run = simulate_with(m, &script_from_trace(m, t), horizon, Resolution::First)?;
    Ok(compare(t, run))
}

fn compare(t: &Trace, run: Trace) -> ReplicationReport {
    let shared: Vec<(usize, usize)> =
        t.vars.iter().enumerate().filter_map(|(i, name)| Some((i, run.var_index(name)?))).collect();
    let mut mismatches = Vec::new();
    for k in 0..t.len().min(run.len()) {
        for &(i, j) in &shared {
            if t.steps[k][i] != run.steps[k][j] {
                mismatches.push(Mismatch {
                    step: k,
                    label: t.vars[i].clone(),
                    expected: t.steps[k][i],
                    actual: run.steps[k][j],
                });
            }
        }
    }
    ReplicationReport { steps: t.len(), compared: shared.len(), mismatches, replayed: run }
}

/// Replays a trace of a merged machine on the original one. Each merged
/// variable becomes the constraint that its subsystem's boundary sum takes
/// the traced value; all shared labels must match exactly. Any subsystem
/// resolution consistent with those constraints is accepted.
pub fn replay_merged(
    original: &CompositeMachine,
    t: &Trace,
    merged: &[MergeCandidate],
) -> Result<ReplicationReport, SimError> {
    let mut per_step: Vec<Vec<CExpr>> = Vec::with_capacity(t.len());
    for k in 0..t.len() {
        let mut row = Vec::new();
        for (i, name) in t.vars.iter().enumerate() {
            if original.label_index(name).is_some() {
                let p = Expr::eq(Expr::Ref(name.clone()), Expr::Const(t.steps[k][i]));
                row.push(original.compile_pred(&p)?);
            }
        }
        for c in merged {
            if let Some(v) = t.value(k, &c.merged_label()).and_then(Value::as_int) {
                row.push(original.compile_pred(&c.boundary_pred(v))?);
            }
        }
        per_step.push(row);
    }
    let holds = |s: &StateVec, k: usize| -> Result<bool, SimError> {
        let vals = original.valuation(s)?;
        for p in &per_step[k] {
            if !original.holds(p, &vals)? {
                return Ok(false);
            }
        }
        Ok(true)
    };
    // layered search; each layer keeps a back pointer into the previous one
    let mut layers: Vec<Vec<(StateVec, usize)>> = Vec::new();
    let mut current = Vec::new();
    for s in original.initial_states() {
        if holds(&s, 0)? {
            current.push((s, usize::MAX));
        }
    }
    for k in 1..t.len() {
        if current.is_empty() {
            break;
        }
        let mut seen = HashSet::new();
        let mut next = Vec::new();
        for (idx, (s, _)) in current.iter().enumerate() {
            for n in original.successors(s)? {
                if !seen.contains(&n) && holds(&n, k)? {
                    seen.insert(n.clone());
                    next.push((n, idx));
                }
            }
        }
        layers.push(std::mem::replace(&mut current, next));
    }
    if current.is_empty() {
        let step = layers.len();
        return Err(SimError::IllegalStep {
            step,
            reason: "no original state matches the shared labels and boundary values".into(),
        });
    }
    let (last, mut back) = current.swap_remove(0);
    let mut order = vec![last];
    for layer in layers.iter().rev() {
        let (s, b) = &layer[back];
        order.push(s.clone());
        back = *b;
    }
    order.reverse();
    let run = original.to_trace(TraceKind::Simulation, &order)?;
    Ok(compare(t, run))
}
