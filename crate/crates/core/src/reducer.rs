//! Subsystem merging: a subtree that reaches the rest of the system only
//! through its supply link is replaced by one bank whose draw ranges over
//! the subtree's effective boundary values.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::archetype::{merged_bank, Instance};
use crate::composer::{compose, ComposeError, CompositeMachine, Connection};
use crate::ir::{
    Archetype, Assertion, AssertionKind, BinOp, Domain, EvalError, Expr, Flavor, Formula, Pred, Trace, Value,
};

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// Field aggregated across the boundary.
pub const BOUNDARY_FIELD: &str = "draw";

const MERGEABLE: [Archetype; 6] = [
    Archetype::Actuator,
    Archetype::Load,
    Archetype::Relay,
    Archetype::Inverter,
    Archetype::MergedLoadBank,
    Archetype::Sensor,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeCandidate {
    /// Instance supplying the subsystem; it stays in the machine.
    pub source: String,
    /// Subsystem instances, sorted.
    pub members: Vec<String>,
    /// Members fed directly by `source`; their draws sum to the boundary value.
    pub roots: Vec<String>,
    #[serde(serialize_with = "values_of")]
    pub effective_domain: Domain,
    /// Product of member domain sizes.
    pub naive_combinations: u128,
    /// Set when the domain came from interval bounds rather than enumeration.
    pub approximate: bool,
}

fn values_of<S: serde::Serializer>(d: &Domain, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(d.values().map(|v| v.to_string()))
}

impl MergeCandidate {
    pub fn merged_name(&self) -> String {
        format!("{}_merged", self.source)
    }

    /// Label of the merged variable once `merge` has run.
    pub fn merged_label(&self) -> String {
        format!("{}.{BOUNDARY_FIELD}", self.merged_name())
    }

    pub fn report(&self) -> MergeReport {
        let effective = self.effective_domain.len();
        MergeReport {
            source: self.source.clone(),
            merged: self.merged_name(),
            members: self.members.clone(),
            naive_combinations: self.naive_combinations,
            effective_values: effective,
            reduction_factor: self.naive_combinations as f64 / effective.max(1) as f64,
            approximate: self.approximate,
            domain: self.effective_domain.to_string(),
        }
    }

    /// `root1.draw + ... + rootN.draw = value` over the original labels.
    pub fn boundary_pred(&self, value: i64) -> Pred {
        let sum = self
            .roots
            .iter()
            .map(|r| Expr::Ref(format!("{r}.{BOUNDARY_FIELD}")))
            .reduce(|a, b| Expr::bin(BinOp::Add, a, b))
            .unwrap_or(Expr::int(0));
        Expr::eq(sum, Expr::int(value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeReport {
    pub source: String,
    pub merged: String,
    pub members: Vec<String>,
    pub naive_combinations: u128,
    pub effective_values: usize,
    pub reduction_factor: f64,
    pub approximate: bool,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReduceError {
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("`{0}` does not head a mergeable subsystem")]
    NotACandidate(String),
    #[error("trace has no `{0}` column")]
    BoundaryValueAbsent(String),
    #[error("trace value `{value}` of `{label}` is not an integer")]
    NonIntegerBoundary { label: String, value: String },
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

fn children(m: &CompositeMachine, i: usize) -> impl Iterator<Item = usize> + '_ {
    (0..m.instances.len()).filter(move |&j| m.upstream[j] == Some(i))
}

fn candidate_at(m: &CompositeMachine, s: usize, cap: u128) -> Result<Option<MergeCandidate>, ReduceError> {
    let src = &m.instances[s];
    if src.spec.downstream.as_deref() != Some(BOUNDARY_FIELD) || m.downstream[s].is_empty() {
        return Ok(None);
    }
    let mut members = Vec::new();
    let mut stack: Vec<usize> = children(m, s).collect();
    while let Some(j) = stack.pop() {
        let inst = &m.instances[j];
        let timed = inst.period.is_some() || inst.deadline.is_some() || inst.final_state.is_some();
        if !MERGEABLE.contains(&inst.spec.tag) || timed {
            return Ok(None);
        }
        members.push(j);
        stack.extend(children(m, j));
    }
    let names: BTreeSet<&str> = members.iter().map(|&j| m.instances[j].name.as_str()).collect();
    let on_channel =
        m.channels.iter().any(|c| names.contains(c.producer.as_str()) || names.contains(c.consumer.as_str()));
    let already_merged = members.len() == 1 && m.instances[members[0]].spec.tag == Archetype::MergedLoadBank;
    if on_channel || already_merged {
        return Ok(None);
    }
    let mut c = MergeCandidate {
        source: src.name.clone(),
        members: names.iter().map(|n| n.to_string()).collect(),
        roots: m.downstream[s].iter().map(|&j| m.instances[j].name.clone()).collect(),
        effective_domain: Domain::Range(0, 0),
        naive_combinations: members.iter().map(|&j| m.instances[j].spec.domain.len() as u128).product(),
        approximate: false,
    };
    let (domain, approximate) = effective_domain(m, &c, cap)?;
    c.effective_domain = domain;
    c.approximate = approximate;
    Ok(Some(c))
}

/// Every source whose whole downstream subtree is mergeable, by source name.
pub fn find_merge_candidates(m: &CompositeMachine, cap: u128) -> Result<Vec<MergeCandidate>, ReduceError> {
    let mut out = Vec::new();
    for s in 0..m.instances.len() {
        if let Some(c) = candidate_at(m, s, cap)? {
            out.push(c);
        }
    }
    Ok(out)
}

/// The candidate headed by `source`, if it is one.
pub fn candidate_for(m: &CompositeMachine, source: &str, cap: u128) -> Result<MergeCandidate, ReduceError> {
    let s = m.instance_index(source).ok_or_else(|| ReduceError::UnknownInstance(source.into()))?;
    candidate_at(m, s, cap)?.ok_or_else(|| ReduceError::NotACandidate(source.into()))
}

/// The subsystem composed with its source, which receives a free supply
/// input and so stands in for the rest of the system.
pub fn isolate(m: &CompositeMachine, c: &MergeCandidate) -> Result<CompositeMachine, ReduceError> {
    let mut instances = Vec::new();
    for name in c.members.iter().chain([&c.source]) {
        let i = m.instance_index(name).ok_or_else(|| ReduceError::UnknownInstance(name.clone()))?;
        instances.push(m.instances[i].clone());
    }
    let inside = |n: &str| n == c.source || c.members.binary_search_by(|x| x.as_str().cmp(n)).is_ok();
    let connections: Vec<Connection> =
        m.connections.iter().filter(|k| inside(&k.source) && inside(&k.sink)).cloned().collect();
    Ok(compose(instances, connections, Vec::new())?)
}

fn boundary_labels(sub: &CompositeMachine, c: &MergeCandidate) -> Vec<usize> {
    c.roots.iter().filter_map(|r| sub.label_index(&format!("{r}.{BOUNDARY_FIELD}"))).collect()
}

fn int_of(v: Value) -> Result<i64, EvalError> {
    v.as_int().ok_or_else(|| EvalError::TypeMismatch(format!("boundary value {v} is not an integer")))
}

/// Achievable boundary values, by enumeration when the subsystem's state
/// product is within `cap`, otherwise by interval bounds (flagged).
pub fn effective_domain(m: &CompositeMachine, c: &MergeCandidate, cap: u128) -> Result<(Domain, bool), ReduceError> {
    let sub = isolate(m, c)?;
    let labels = boundary_labels(&sub, c);
    let sizes: Vec<u64> = sub.vars.iter().map(|v| v.domain.len() as u64).collect();
    let total: u128 = sizes.iter().map(|&s| s as u128).product();
    if total > cap {
        let (lo, hi) = interval(m, c)?;
        return Ok((Domain::Range(lo, hi), true));
    }
    let sums: BTreeSet<i64> = (0..total as u64)
        .into_par_iter()
        .map(|mut k| -> Result<i64, EvalError> {
            let mut s = Vec::with_capacity(sizes.len());
            for &n in &sizes {
                s.push((k % n) as u32);
                k /= n;
            }
            let vals = sub.valuation(&s)?;
            labels.iter().try_fold(0i64, |acc, &l| Ok(acc + int_of(vals[l])?))
        })
        .collect::<Result<BTreeSet<i64>, EvalError>>()?;
    Ok((Domain::from_ints(sums), false))
}

/// Sound bounds on the boundary sum from per-instance draw ranges.
fn interval(m: &CompositeMachine, c: &MergeCandidate) -> Result<(i64, i64), ReduceError> {
    fn range(m: &CompositeMachine, i: usize) -> Result<(i64, i64), ReduceError> {
        let spec = &m.instances[i].spec;
        if spec.downstream.is_some() {
            let mut hi = 0;
            for &j in &m.downstream[i] {
                hi += range(m, j)?.1;
            }
            return Ok((0, hi));
        }
        if spec.var == BOUNDARY_FIELD {
            let vals: Vec<i64> = spec.domain.values().filter_map(Value::as_int).collect();
            return Ok((vals.iter().copied().min().unwrap_or(0), vals.iter().copied().max().unwrap_or(0)));
        }
        let Some(e) = spec.define(BOUNDARY_FIELD) else { return Ok((0, 0)) };
        let (mut lo, mut hi) = (i64::MAX, i64::MIN);
        for state in spec.domain.values() {
            for supply in [true, false] {
                let inputs = BTreeMap::from([("input.supplyingPower".to_string(), Value::Bool(supply))]);
                let v = crate::archetype::eval_local(spec, state, &inputs, e)
                    .map_err(|_| EvalError::Unbound(format!("{}.{BOUNDARY_FIELD}", m.instances[i].name)))?;
                let v = int_of(v)?;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Ok((lo, hi))
    }
    let (mut lo, mut hi) = (0, 0);
    for r in &c.roots {
        let i = m.instance_index(r).ok_or_else(|| ReduceError::UnknownInstance(r.clone()))?;
        let (a, b) = range(m, i)?;
        lo += a;
        hi += b;
    }
    Ok((lo, hi))
}

/// Replaces the subsystem with `<source>_merged`, a bank over the
/// effective domain whose initial values are the boundary sums of `m`'s
/// initial states.
pub fn merge(m: &CompositeMachine, c: &MergeCandidate) -> Result<CompositeMachine, ReduceError> {
    let mut initial = BTreeSet::new();
    let labels: Vec<usize> = c.roots.iter().filter_map(|r| m.label_index(&format!("{r}.{BOUNDARY_FIELD}"))).collect();
    for s in m.initial_states() {
        let vals = m.valuation(&s)?;
        initial.insert(labels.iter().try_fold(0i64, |acc, &l| Ok::<_, EvalError>(acc + int_of(vals[l])?))?);
    }
    let inside = |n: &str| c.members.binary_search_by(|x| x.as_str().cmp(n)).is_ok();
    let mut instances: Vec<Instance> = m.instances.iter().filter(|i| !inside(&i.name)).cloned().collect();
    let mut bank = Instance::new(
        c.merged_name(),
        merged_bank(c.effective_domain.clone(), initial.into_iter().map(Value::Int).collect()),
    );
    bank.origin = Some(format!("merged: {}", c.members.join(", ")));
    instances.push(bank);
    let mut connections: Vec<Connection> =
        m.connections.iter().filter(|k| !inside(&k.source) && !inside(&k.sink)).cloned().collect();
    connections.push(Connection::power(&c.source, &c.merged_name()));
    Ok(compose(instances, connections, m.channels.clone())?)
}

/// Greedily merges the largest non-overlapping candidates.
pub fn auto_merge(m: &CompositeMachine, cap: u128) -> Result<(CompositeMachine, Vec<MergeCandidate>), ReduceError> {
    let mut all = find_merge_candidates(m, cap)?;
    all.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.source.cmp(&b.source)));
    let mut taken: BTreeSet<String> = BTreeSet::new();
    let mut chosen = Vec::new();
    for c in all {
        let touches = c.members.iter().any(|n| taken.contains(n)) || taken.contains(&c.source);
        if touches {
            continue;
        }
        taken.extend(c.members.iter().cloned());
        taken.insert(c.source.clone());
        chosen.push(c);
    }
    chosen.sort_by(|a, b| a.source.cmp(&b.source));
    let mut out = m.clone();
    for c in &chosen {
        out = merge(&out, c)?;
    }
    Ok((out, chosen))
}

/// Boundary values of the merged variable along a trace on the merged machine.
pub fn boundary_values(top: &Trace, c: &MergeCandidate) -> Result<Vec<i64>, ReduceError> {
    let label = c.merged_label();
    let column = top.column(&label).ok_or_else(|| ReduceError::BoundaryValueAbsent(label.clone()))?;
    column
        .into_iter()
        .map(|v| {
            v.as_int().ok_or_else(|| ReduceError::NonIntegerBoundary { label: label.clone(), value: v.to_string() })
        })
        .collect()
}

/// Path-discovery assertion on the isolated subsystem claiming the
/// boundary sequence of `top` never occurs. A one-step trace gives
/// `G(sum != v)`; longer traces give the forbidden step sequence.
pub fn refine(
    top: &Trace,
    c: &MergeCandidate,
    original: &CompositeMachine,
) -> Result<(CompositeMachine, Assertion), ReduceError> {
    let values = boundary_values(top, c)?;
    let sub = isolate(original, c)?;
    let formula = match values.as_slice() {
        [v] => Formula::globally(Formula::prop(c.boundary_pred(*v).negated())),
        _ => Formula::forbidden_sequence(values.iter().map(|&v| c.boundary_pred(v)).collect()),
    };
    let a = Assertion {
        kind: AssertionKind::PathDiscovery,
        flavor: Flavor::Capacity,
        formula,
        provenance: format!("refinement of {} behind {}", c.merged_name(), c.source),
    };
    Ok((sub, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archetype::instantiate;
    use crate::checker::{check, CheckOptions};

    fn inst(tag: Archetype, name: &str, params: &[(&str, i64)]) -> Instance {
        let p = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        instantiate(tag, name, &p).unwrap()
    }

    fn breaker_with(n: usize) -> CompositeMachine {
        let mut instances = vec![
            inst(Archetype::Battery, "Battery1", &[("capacity", 4)]),
            inst(Archetype::CircuitBreaker, "CircuitBreakerEY166", &[("limit", 10)]),
        ];
        let mut connections = vec![Connection::power("Battery1", "CircuitBreakerEY166")];
        for k in 1..=n {
            let name = format!("Fan{k}");
            instances.push(inst(Archetype::Actuator, &name, &[]));
            connections.push(Connection::power("CircuitBreakerEY166", &name));
        }
        compose(instances, connections, vec![]).unwrap()
    }

    #[test]
    fn six_actuators_give_thirteen_values() {
        let m = breaker_with(6);
        let cands = find_merge_candidates(&m, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(cands.len(), 1);
        let c = &cands[0];
        assert_eq!(c.source, "CircuitBreakerEY166");
        assert_eq!(c.naive_combinations, 729);
        assert_eq!(c.effective_domain, Domain::Range(0, 12));
        assert!(!c.approximate);
        let merged = merge(&m, c).unwrap();
        let i = merged.instance_index("CircuitBreakerEY166_merged").unwrap();
        assert_eq!(merged.instances[i].spec.domain.len(), 13);
        assert_eq!(merged.instances.len(), 3);
    }

    #[test]
    fn small_merges() {
        for (n, hi) in [(1, 2), (2, 4)] {
            let c = candidate_for(&breaker_with(n), "CircuitBreakerEY166", DEFAULT_ENUMERATION_CAP).unwrap();
            assert_eq!(c.effective_domain, Domain::Range(0, hi));
        }
    }

    #[test]
    fn interval_fallback_is_flagged() {
        let m = breaker_with(3);
        let c = candidate_for(&m, "CircuitBreakerEY166", 2).unwrap();
        assert!(c.approximate);
        assert_eq!(c.effective_domain, Domain::Range(0, 6));
    }

    #[test]
    fn refine_finds_subsystem_assignment() {
        let m = breaker_with(6);
        let c = candidate_for(&m, "CircuitBreakerEY166", DEFAULT_ENUMERATION_CAP).unwrap();
        let merged = merge(&m, &c).unwrap();
        let top = merged.to_trace(crate::ir::TraceKind::Counterexample, &[merged.initial_states()[0].clone()]).unwrap();
        let mut top = top;
        let col = top.var_index(&c.merged_label()).unwrap();
        top.steps[0][col] = Value::Int(11);
        let (sub, a) = refine(&top, &c, &m).unwrap();
        assert_eq!(
            a.formula.to_string(),
            "G((((((Fan1.draw + Fan2.draw) + Fan3.draw) + Fan4.draw) + Fan5.draw) + Fan6.draw) != 11)"
        );
        let v = check(&sub, &a, CheckOptions::default()).unwrap();
        let t = v.trace().unwrap();
        let last = t.len() - 1;
        let draws: Vec<i64> =
            (1..=6).map(|k| t.value(last, &format!("Fan{k}.draw")).unwrap().as_int().unwrap()).collect();
        assert_eq!(draws.iter().sum::<i64>(), 11);
    }

    #[test]
    fn missing_boundary_is_reported() {
        let m = breaker_with(2);
        let c = candidate_for(&m, "CircuitBreakerEY166", DEFAULT_ENUMERATION_CAP).unwrap();
        let t = m.to_trace(crate::ir::TraceKind::Counterexample, &m.initial_states()[..1]).unwrap();
        assert!(matches!(refine(&t, &c, &m), Err(ReduceError::BoundaryValueAbsent(_))));
    }

    #[test]
    fn nothing_to_merge_under_a_battery_with_a_breaker() {
        let m = compose(
            vec![
                inst(Archetype::Battery, "B", &[("capacity", 4)]),
                inst(Archetype::CircuitBreaker, "C", &[("limit", 3)]),
            ],
            vec![Connection::power("B", "C")],
            vec![],
        )
        .unwrap();
        assert!(find_merge_candidates(&m, DEFAULT_ENUMERATION_CAP).unwrap().is_empty());
    }

    #[test]
    fn auto_merge_takes_the_largest() {
        let (merged, chosen) = auto_merge(&breaker_with(3), DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(chosen.len(), 1);
        assert!(merged.instance_index("CircuitBreakerEY166_merged").is_some());
    }
}
