//! Synchronous composition of component machines into one Kripke structure.
//!
//! A global state assigns one value to every state variable: each instance's
//! local variable, each free environment input, each channel counter and the
//! clock phase. Defined outputs are not stored; they are recomputed from the
//! state in topological order whenever a valuation is needed.

use std::collections::{BTreeMap, HashMap};

use num_integer::Integer;
use thiserror::Error;

use crate::archetype::Instance;
use crate::ingest::ConnectionKind;
use crate::ir::{ChoiceKind, Domain, EvalError, Expr, LocalExpr, LocalRef, Pred, Target, Trace, TraceKind, Value};

/// Compiled expression over label indices.
pub type CExpr = Expr<usize>;

/// One value index per state variable.
pub type StateVec = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Connection {
    pub source: String,
    pub sink: String,
    pub kind: ConnectionKind,
}

impl Connection {
    pub fn power(source: &str, sink: &str) -> Self {
        Connection { source: source.into(), sink: sink.into(), kind: ConnectionKind::Power }
    }
}

/// Counting-semaphore channel between a periodic producer and consumer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Channel {
    pub name: String,
    pub producer: String,
    pub consumer: String,
    pub capacity: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CyclicClock {
    pub tick: u64,
    pub cycle: u64,
}

impl CyclicClock {
    pub fn phases(&self) -> u64 {
        self.cycle / self.tick
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("no periods given")]
    NoPeriods,
    #[error("periods must be positive")]
    ZeroPeriod,
    #[error("hyperperiod overflows")]
    Overflow,
}

/// Tick is the GCD of the periods, cycle their LCM (the hyperperiod).
pub fn clock_config(periods: &[u64]) -> Result<CyclicClock, ClockError> {
    let (&first, rest) = periods.split_first().ok_or(ClockError::NoPeriods)?;
    if periods.contains(&0) {
        return Err(ClockError::ZeroPeriod);
    }
    let mut tick = first;
    let mut cycle = first;
    for &p in rest {
        tick = tick.gcd(&p);
        cycle = (cycle / cycle.gcd(&p)).checked_mul(p).ok_or(ClockError::Overflow)?;
    }
    Ok(CyclicClock { tick, cycle })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComposeError {
    #[error("duplicate instance name `{0}`")]
    DuplicateInstance(String),
    #[error("connection references unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("combinational cycle among defined outputs: {}", .0.join(" -> "))]
    CombinationalCycle(Vec<String>),
    #[error("`{instance}` has no binding for `{name}`")]
    UnboundInput { instance: String, name: String },
    #[error("`{instance}` takes no upstream input but is connected from `{driver}`")]
    NoInput { instance: String, driver: String },
    #[error("`{instance}` is driven by both `{first}` and `{second}`")]
    MultipleDrivers { instance: String, first: String, second: String },
    #[error("`{provider}` provides no `{field}` read by `{instance}`")]
    MissingOutput { instance: String, provider: String, field: String },
    #[error("clock: {0}")]
    Clock(#[from] ClockError),
    #[error("clock needs {0} phases, too many to encode")]
    ClockTooLarge(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("`{value}` is not a value of `{var}` (domain {domain})")]
    UnknownValue { var: String, value: String, domain: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Local(usize),
    Free(usize),
    Channel(usize),
    ClockPhase,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub name: String,
    pub domain: Domain,
    pub kind: VarKind,
}

/// Unbound upstream field of an instance, modeled as an unconstrained input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeInput {
    pub instance: usize,
    /// Name of the synthetic input component, e.g. `Fan1_free`.
    pub name: String,
    pub field: String,
    pub domain: Domain,
}

#[derive(Debug, Clone)]
enum LabelSource {
    Var(usize),
    Define { instance: usize, expr: CExpr },
    Clock,
}

#[derive(Debug, Clone)]
struct Label {
    name: String,
    source: LabelSource,
}

/// Bit-packing of state vectors, in stable variable order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateCodec {
    slots: Vec<(usize, u32, u32)>,
    words: usize,
}

impl StateCodec {
    fn new(vars: &[Variable]) -> Self {
        let mut slots = Vec::with_capacity(vars.len());
        let (mut word, mut bit) = (0usize, 0u32);
        for v in vars {
            let width = v.domain.bit_width();
            if bit + width > 64 {
                word += 1;
                bit = 0;
            }
            slots.push((word, bit, width));
            bit += width;
        }
        StateCodec { slots, words: word + 1 }
    }

    pub fn words(&self) -> usize {
        self.words
    }

    pub fn encode(&self, s: &[u32]) -> Box<[u64]> {
        let mut out = vec![0u64; self.words];
        for (&(w, b, _), &v) in self.slots.iter().zip(s) {
            out[w] |= u64::from(v) << b;
        }
        out.into_boxed_slice()
    }

    pub fn decode(&self, packed: &[u64]) -> StateVec {
        self.slots
            .iter()
            .map(|&(w, b, width)| if width == 0 { 0 } else { ((packed[w] >> b) & ((1u64 << width) - 1)) as u32 })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CompositeMachine {
    /// Sorted by name.
    pub instances: Vec<Instance>,
    pub connections: Vec<Connection>,
    pub channels: Vec<Channel>,
    pub clock: Option<CyclicClock>,
    pub free_inputs: Vec<FreeInput>,
    pub upstream: Vec<Option<usize>>,
    /// Downstream instances feeding each instance's aggregated field, by name.
    pub downstream: Vec<Vec<usize>>,
    pub vars: Vec<Variable>,
    var_label: Vec<usize>,
    local_var: Vec<usize>,
    labels: Vec<Label>,
    label_index: HashMap<String, usize>,
    eval_order: Vec<usize>,
    transitions: Vec<Vec<(CExpr, Target)>>,
    channel_io: Vec<(Option<u64>, Option<u64>)>,
    codec: StateCodec,
}

/// Assembles the synchronous product. Instances are sorted by name; the
/// clock is derived from instance periods and deadlines.
pub fn compose(
    mut instances: Vec<Instance>,
    connections: Vec<Connection>,
    channels: Vec<Channel>,
) -> Result<CompositeMachine, ComposeError> {
    instances.sort_by(|a, b| a.name.cmp(&b.name));
    for w in instances.windows(2) {
        if w[0].name == w[1].name {
            return Err(ComposeError::DuplicateInstance(w[0].name.clone()));
        }
    }
    let index: HashMap<&str, usize> = instances.iter().enumerate().map(|(i, x)| (x.name.as_str(), i)).collect();
    let find = |n: &str| index.get(n).copied().ok_or_else(|| ComposeError::UnknownInstance(n.to_owned()));

    let n = instances.len();
    let mut upstream: Vec<Option<usize>> = vec![None; n];
    let mut downstream: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in &connections {
        let (src, dst) = (find(&c.source)?, find(&c.sink)?);
        if !instances[dst].spec.upstream {
            return Err(ComposeError::NoInput { instance: c.sink.clone(), driver: c.source.clone() });
        }
        match upstream[dst] {
            Some(prev) if prev != src => {
                return Err(ComposeError::MultipleDrivers {
                    instance: c.sink.clone(),
                    first: instances[prev].name.clone(),
                    second: c.source.clone(),
                })
            }
            _ => upstream[dst] = Some(src),
        }
        if let Some(field) = &instances[src].spec.downstream {
            if instances[dst].spec.has_output(field) && !downstream[src].contains(&dst) {
                downstream[src].push(dst);
            }
        }
    }
    for d in &mut downstream {
        d.sort_unstable();
    }

    let periods: Vec<u64> = instances.iter().filter_map(|i| i.period).collect();
    let clock = if periods.is_empty() {
        None
    } else {
        let mut c = clock_config(&periods)?;
        for d in instances.iter().filter_map(|i| i.deadline) {
            if d == 0 {
                return Err(ClockError::ZeroPeriod.into());
            }
            c.tick = c.tick.gcd(&d);
        }
        if c.phases() > u64::from(u32::MAX) {
            return Err(ComposeError::ClockTooLarge(c.phases()));
        }
        Some(c)
    };

    // state variables
    let mut vars = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        vars.push(Variable {
            name: format!("{}.{}", inst.name, inst.spec.var),
            domain: inst.spec.domain.clone(),
            kind: VarKind::Local(i),
        });
    }
    let mut free_inputs = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        if inst.spec.upstream && upstream[i].is_none() {
            for (field, domain) in &inst.spec.inputs {
                free_inputs.push(FreeInput {
                    instance: i,
                    name: format!("{}_free", inst.name),
                    field: field.clone(),
                    domain: domain.clone(),
                });
            }
        }
    }
    for (k, f) in free_inputs.iter().enumerate() {
        vars.push(Variable {
            name: format!("{}.{}", f.name, f.field),
            domain: f.domain.clone(),
            kind: VarKind::Free(k),
        });
    }
    let mut channel_io = Vec::new();
    for (k, ch) in channels.iter().enumerate() {
        let every = |who: &str| -> Result<Option<u64>, ComposeError> {
            let p = instances[find(who)?].period;
            Ok(match (p, clock) {
                (Some(p), Some(c)) => Some(p / c.tick),
                _ => None,
            })
        };
        channel_io.push((every(&ch.producer)?, every(&ch.consumer)?));
        vars.push(Variable {
            name: format!("{}.count", ch.name),
            domain: Domain::Range(0, i64::from(ch.capacity) + 1),
            kind: VarKind::Channel(k),
        });
    }
    if let Some(c) = clock {
        vars.push(Variable {
            name: "clock_phase".into(),
            domain: Domain::Range(0, c.phases() as i64 - 1),
            kind: VarKind::ClockPhase,
        });
    }

    // labels: per instance its variable then its defines, then the rest
    let mut labels = Vec::new();
    let mut var_label = vec![0; vars.len()];
    let mut define_label: HashMap<(usize, &str), usize> = HashMap::new();
    for (i, inst) in instances.iter().enumerate() {
        var_label[i] = labels.len();
        labels.push(Label { name: vars[i].name.clone(), source: LabelSource::Var(i) });
        for (d, _) in &inst.spec.defines {
            define_label.insert((i, d.as_str()), labels.len());
            labels.push(Label {
                name: format!("{}.{d}", inst.name),
                source: LabelSource::Define { instance: i, expr: Expr::bool(false) },
            });
        }
    }
    for (v, var) in vars.iter().enumerate().skip(n) {
        var_label[v] = labels.len();
        labels.push(Label { name: var.name.clone(), source: LabelSource::Var(v) });
    }
    if clock.is_some() {
        labels.push(Label { name: "clock".into(), source: LabelSource::Clock });
    }

    let field_label = |j: usize, field: &str| -> Option<usize> {
        if instances[j].spec.var == field {
            Some(var_label[j])
        } else {
            define_label.get(&(j, field)).copied()
        }
    };
    let compile = |i: usize, e: &LocalExpr| -> Result<CExpr, ComposeError> {
        let inst = &instances[i];
        e.try_map(&mut |r: &LocalRef| match r {
            LocalRef::Own(name) => {
                if let Some(l) = field_label(i, name) {
                    Ok(Expr::Ref(l))
                } else if let Some(p) = inst.spec.param(name) {
                    Ok(Expr::int(p))
                } else {
                    Err(ComposeError::UnboundInput { instance: inst.name.clone(), name: name.clone() })
                }
            }
            LocalRef::Input(field) => match upstream[i] {
                Some(j) => field_label(j, field).map(Expr::Ref).ok_or_else(|| ComposeError::MissingOutput {
                    instance: inst.name.clone(),
                    provider: instances[j].name.clone(),
                    field: field.clone(),
                }),
                None => free_inputs
                    .iter()
                    .position(|f| f.instance == i && &f.field == field)
                    .map(|k| Expr::Ref(var_label[n + k]))
                    .ok_or_else(|| ComposeError::UnboundInput {
                        instance: inst.name.clone(),
                        name: format!("input.{field}"),
                    }),
            },
            LocalRef::Output(k, field) => {
                let j = *downstream[i].get(k.wrapping_sub(1)).ok_or_else(|| ComposeError::UnboundInput {
                    instance: inst.name.clone(),
                    name: format!("output{k}.{field}"),
                })?;
                field_label(j, field).map(Expr::Ref).ok_or_else(|| ComposeError::MissingOutput {
                    instance: inst.name.clone(),
                    provider: instances[j].name.clone(),
                    field: field.clone(),
                })
            }
            LocalRef::OutputSum(field) => {
                let mut parts = Vec::new();
                for &j in &downstream[i] {
                    parts.push(field_label(j, field).map(Expr::Ref).ok_or_else(|| ComposeError::MissingOutput {
                        instance: inst.name.clone(),
                        provider: instances[j].name.clone(),
                        field: field.clone(),
                    })?);
                }
                Ok(parts.into_iter().reduce(|a, b| Expr::bin(crate::ir::BinOp::Add, a, b)).unwrap_or(Expr::int(0)))
            }
        })
    };

    let mut transitions = Vec::with_capacity(n);
    for (i, inst) in instances.iter().enumerate() {
        for (d, e) in &inst.spec.defines {
            let l = define_label[&(i, d.as_str())];
            labels[l].source = LabelSource::Define { instance: i, expr: compile(i, e)? };
        }
        let mut arms = Vec::new();
        for t in &inst.spec.transitions {
            arms.push((compile(i, &t.guard)?, t.target.clone()));
        }
        transitions.push(arms);
    }

    let eval_order = topo_order(&labels)?;
    let label_index = labels.iter().enumerate().map(|(i, l)| (l.name.clone(), i)).collect();
    let codec = StateCodec::new(&vars);
    Ok(CompositeMachine {
        local_var: (0..n).collect(),
        instances,
        connections,
        channels,
        clock,
        free_inputs,
        upstream,
        downstream,
        vars,
        var_label,
        labels,
        label_index,
        eval_order,
        transitions,
        channel_io,
        codec,
    })
}

fn topo_order(labels: &[Label]) -> Result<Vec<usize>, ComposeError> {
    let defines: Vec<usize> =
        (0..labels.len()).filter(|&l| matches!(labels[l].source, LabelSource::Define { .. })).collect();
    let deps = |l: usize| -> Vec<usize> {
        let mut out = Vec::new();
        if let LabelSource::Define { expr, .. } = &labels[l].source {
            expr.visit_refs(&mut |&r| {
                if matches!(labels[r].source, LabelSource::Define { .. }) {
                    out.push(r);
                }
            });
        }
        out
    };
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut mark = vec![0u8; labels.len()];
    let mut order = Vec::with_capacity(defines.len());
    let mut stack: Vec<usize> = Vec::new();
    fn visit(
        l: usize,
        deps: &dyn Fn(usize) -> Vec<usize>,
        mark: &mut [u8],
        stack: &mut Vec<usize>,
        order: &mut Vec<usize>,
    ) -> Result<(), Vec<usize>> {
        match mark[l] {
            2 => return Ok(()),
            1 => {
                let start = stack.iter().position(|&s| s == l).unwrap_or(0);
                let mut cycle = stack[start..].to_vec();
                cycle.push(l);
                return Err(cycle);
            }
            _ => {}
        }
        mark[l] = 1;
        stack.push(l);
        for d in deps(l) {
            visit(d, deps, mark, stack, order)?;
        }
        stack.pop();
        mark[l] = 2;
        order.push(l);
        Ok(())
    }
    for &l in &defines {
        visit(l, &deps, &mut mark, &mut stack, &mut order).map_err(|cycle| {
            ComposeError::CombinationalCycle(cycle.into_iter().map(|c| labels[c].name.clone()).collect())
        })?;
    }
    Ok(order)
}

impl CompositeMachine {
    pub fn codec(&self) -> &StateCodec {
        &self.codec
    }

    pub fn instance_index(&self, name: &str) -> Option<usize> {
        self.instances.binary_search_by(|i| i.name.as_str().cmp(name)).ok()
    }

    /// State variable holding instance `i`'s local state.
    pub fn local_var(&self, i: usize) -> usize {
        self.local_var[i]
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_index.get(name).copied()
    }

    /// Label index of a state variable.
    pub fn var_label(&self, v: usize) -> usize {
        self.var_label[v]
    }

    /// Domain of a label, when it is a state variable.
    pub fn label_domain(&self, label: usize) -> Option<&Domain> {
        match self.labels[label].source {
            LabelSource::Var(v) => Some(&self.vars[v].domain),
            _ => None,
        }
    }

    /// Defined-output expression of a label, if it is one.
    pub fn define_expr(&self, label: usize) -> Option<(usize, &CExpr)> {
        match &self.labels[label].source {
            LabelSource::Define { instance, expr } => Some((*instance, expr)),
            _ => None,
        }
    }

    /// Upper bound on the state space size.
    pub fn state_space_bound(&self) -> u128 {
        self.vars.iter().fold(1u128, |acc, v| acc.saturating_mul(v.domain.len() as u128))
    }

    /// Full valuation of every label in state `s`.
    pub fn valuation(&self, s: &[u32]) -> Result<Vec<Value>, EvalError> {
        let mut vals = vec![Value::Bool(false); self.labels.len()];
        for (v, var) in self.vars.iter().enumerate() {
            vals[self.var_label[v]] = var.domain.value(s[v] as usize);
        }
        if let (Some(c), Some(l)) = (self.clock, self.label_index("clock")) {
            let phase = s[self.vars.len() - 1] as i64;
            vals[l] = Value::Int(phase * c.tick as i64);
        }
        for &l in &self.eval_order {
            if let LabelSource::Define { expr, .. } = &self.labels[l].source {
                let v = expr.eval(&mut |r: &usize| Ok(vals[*r]))?;
                vals[l] = v;
            }
        }
        Ok(vals)
    }

    pub fn eval(&self, e: &CExpr, vals: &[Value]) -> Result<Value, EvalError> {
        e.eval(&mut |r: &usize| Ok(vals[*r]))
    }

    pub fn holds(&self, e: &CExpr, vals: &[Value]) -> Result<bool, EvalError> {
        match self.eval(e, vals)? {
            Value::Bool(b) => Ok(b),
            other => Err(EvalError::TypeMismatch(format!("predicate evaluated to {other}"))),
        }
    }

    /// Resolves a predicate's variable names against the machine's labels.
    /// Bare identifiers that are not labels are read as enumeration symbols.
    pub fn compile_pred(&self, p: &Pred) -> Result<CExpr, PredError> {
        let compiled = p.try_map(&mut |name: &String| match self.label_index(name) {
            Some(l) => Ok(Expr::Ref(l)),
            None if !name.contains('.') => Ok(Expr::Const(Value::sym(name))),
            None => Err(PredError::UnknownVariable(name.clone())),
        })?;
        self.check_symbols(&compiled)?;
        Ok(compiled)
    }

    fn check_symbols(&self, e: &CExpr) -> Result<(), PredError> {
        match e {
            Expr::Bin(op, l, r) if op.is_comparison() => {
                for (a, b) in [(l, r), (r, l)] {
                    if let (Expr::Ref(label), Expr::Const(v @ Value::Sym(_))) = (a.as_ref(), b.as_ref()) {
                        if let Some(d) = self.label_domain(*label) {
                            if !d.contains(*v) {
                                return Err(PredError::UnknownValue {
                                    var: self.labels[*label].name.clone(),
                                    value: v.to_string(),
                                    domain: d.to_string(),
                                });
                            }
                        }
                    }
                }
                Ok(())
            }
            Expr::Bin(_, l, r) => {
                self.check_symbols(l)?;
                self.check_symbols(r)
            }
            Expr::Not(a) => self.check_symbols(a),
            Expr::Case(arms) => arms.iter().try_for_each(|(g, v)| {
                self.check_symbols(g)?;
                self.check_symbols(v)
            }),
            _ => Ok(()),
        }
    }

    pub fn initial_states(&self) -> Vec<StateVec> {
        let options: Vec<Vec<u32>> = self
            .vars
            .iter()
            .map(|v| match v.kind {
                VarKind::Local(i) => {
                    let spec = &self.instances[i].spec;
                    let mut idx: Vec<u32> =
                        spec.initial.iter().filter_map(|x| spec.domain.index_of(*x)).map(|x| x as u32).collect();
                    idx.sort_unstable();
                    idx.dedup();
                    idx
                }
                VarKind::Free(_) => (0..v.domain.len() as u32).collect(),
                VarKind::Channel(_) | VarKind::ClockPhase => vec![0],
            })
            .collect();
        product(&options)
    }

    fn deterministic(&self, i: usize, current: u32, vals: &[Value]) -> Result<u32, EvalError> {
        let spec = &self.instances[i].spec;
        for (g, t) in &self.transitions[i] {
            if self.holds(g, vals)? {
                return Ok(match t {
                    Target::Stay => current,
                    Target::Value(v) => spec
                        .domain
                        .index_of(*v)
                        .ok_or_else(|| EvalError::TypeMismatch(format!("target {v} outside domain")))?
                        as u32,
                });
            }
        }
        Err(EvalError::NoCaseMatched)
    }

    fn channel_next(&self, k: usize, count: u32, s: &[u32]) -> u32 {
        let phase = if self.clock.is_some() { s[self.vars.len() - 1] as u64 } else { 0 };
        let active = |every: Option<u64>| every.is_some_and(|e| phase % e == 0);
        let (p, c) = self.channel_io[k];
        let top = self.channels[k].capacity + 1;
        match (active(p), active(c)) {
            (true, false) => (count + 1).min(top),
            (false, true) => count.saturating_sub(1),
            _ => count,
        }
    }

    fn phase_next(&self, phase: u32) -> u32 {
        let n = self.clock.map(|c| c.phases()).unwrap_or(1) as u32;
        (phase + 1) % n
    }

    /// Candidate next values of every state variable.
    pub fn successor_options(&self, s: &[u32], vals: &[Value]) -> Result<Vec<Vec<u32>>, EvalError> {
        self.vars
            .iter()
            .enumerate()
            .map(|(v, var)| {
                Ok(match var.kind {
                    VarKind::Local(i) => {
                        let spec = &self.instances[i].spec;
                        let mut next = vec![self.deterministic(i, s[v], vals)?];
                        let current = spec.domain.value(s[v] as usize);
                        next.extend(
                            spec.choice_targets(current, |_| true)
                                .into_iter()
                                .filter_map(|t| spec.domain.index_of(t))
                                .map(|x| x as u32),
                        );
                        next.sort_unstable();
                        next.dedup();
                        next
                    }
                    VarKind::Free(_) => (0..var.domain.len() as u32).collect(),
                    VarKind::Channel(k) => vec![self.channel_next(k, s[v], s)],
                    VarKind::ClockPhase => vec![self.phase_next(s[v])],
                })
            })
            .collect()
    }

    /// All successors of `s`, in lexicographic order of value indices.
    pub fn successors(&self, s: &[u32]) -> Result<Vec<StateVec>, EvalError> {
        let vals = self.valuation(s)?;
        Ok(product(&self.successor_options(s, &vals)?))
    }

    /// The successor taken when every choice keeps its current value:
    /// deterministic guards fire, free inputs hold.
    pub fn default_successor(&self, s: &[u32], vals: &[Value]) -> Result<StateVec, EvalError> {
        self.vars
            .iter()
            .enumerate()
            .map(|(v, var)| {
                Ok(match var.kind {
                    VarKind::Local(i) => self.deterministic(i, s[v], vals)?,
                    VarKind::Free(_) => s[v],
                    VarKind::Channel(k) => self.channel_next(k, s[v], s),
                    VarKind::ClockPhase => self.phase_next(s[v]),
                })
            })
            .collect()
    }

    /// Variables whose next value is not fixed by the current state.
    pub fn choice_vars(&self) -> Vec<usize> {
        (0..self.vars.len())
            .filter(|&v| match self.vars[v].kind {
                VarKind::Local(i) => {
                    let spec = &self.instances[i].spec;
                    spec.has_choices() || spec.initial.len() > 1
                }
                VarKind::Free(_) => true,
                _ => false,
            })
            .collect()
    }

    /// Local variables of instances that offer user actions.
    pub fn user_action_vars(&self) -> Vec<usize> {
        (0..self.instances.len())
            .filter(|&i| self.instances[i].spec.choices.iter().any(|c| c.kind == ChoiceKind::UserAction))
            .map(|i| self.local_var[i])
            .collect()
    }

    /// Whether moving `var` from `from` to `to` is one of its user actions.
    pub fn is_user_action(&self, var: usize, from: u32, to: u32) -> bool {
        let VarKind::Local(i) = self.vars[var].kind else { return false };
        let spec = &self.instances[i].spec;
        let (a, b) = (spec.domain.value(from as usize), spec.domain.value(to as usize));
        from != to
            && spec.choices.iter().any(|c| {
                c.kind == ChoiceKind::UserAction
                    && c.from.is_none_or(|f| f == a)
                    && match &c.targets {
                        crate::ir::ChoiceTargets::All => true,
                        crate::ir::ChoiceTargets::Values(vs) => vs.contains(&b),
                    }
            })
    }

    pub fn to_trace(&self, kind: TraceKind, states: &[StateVec]) -> Result<Trace, EvalError> {
        Ok(Trace {
            kind,
            vars: self.label_names(),
            steps: states.iter().map(|s| self.valuation(s)).collect::<Result<_, _>>()?,
            loop_start: None,
        })
    }

    /// Recovers the state vector of one trace step; `None` if a state
    /// variable is missing or holds a value outside its domain.
    pub fn state_of(&self, trace: &Trace, step: usize) -> Option<StateVec> {
        self.vars
            .iter()
            .map(|v| {
                let val = trace.value(step, &v.name)?;
                v.domain.index_of(val).map(|x| x as u32)
            })
            .collect()
    }

    /// Recomposes with replaced instances, keeping wiring and channels.
    pub fn with_instances(&self, instances: Vec<Instance>) -> Result<CompositeMachine, ComposeError> {
        compose(instances, self.connections.clone(), self.channels.clone())
    }

    /// Same machine with the given choice kind removed from every instance.
    pub fn without(&self, kind: ChoiceKind) -> Result<CompositeMachine, ComposeError> {
        let instances = self.instances.iter().map(|i| Instance { spec: i.spec.without(kind), ..i.clone() }).collect();
        self.with_instances(instances)
    }

    /// Periods of every instance that has one, by instance name.
    pub fn periods(&self) -> BTreeMap<&str, u64> {
        self.instances.iter().filter_map(|i| Some((i.name.as_str(), i.period?))).collect()
    }
}

/// Cartesian product in lexicographic order.
pub fn product(options: &[Vec<u32>]) -> Vec<StateVec> {
    let mut out: Vec<StateVec> = vec![Vec::with_capacity(options.len())];
    for opts in options {
        let mut next = Vec::with_capacity(out.len() * opts.len());
        for prefix in &out {
            for &o in opts {
                let mut p = prefix.clone();
                p.push(o);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archetype::instantiate;
    use crate::ir::{parse_predicate, Archetype};

    fn inst(tag: Archetype, name: &str, params: &[(&str, i64)]) -> Instance {
        let p = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        instantiate(tag, name, &p).unwrap()
    }

    fn sym(s: &str) -> Value {
        Value::sym(s)
    }

    fn bank_chain() -> CompositeMachine {
        compose(
            vec![
                inst(Archetype::MergedLoadBank, "BankOne", &[("drawlimit", 12)]),
                inst(Archetype::Battery, "Battery1", &[("capacity", 4)]),
                inst(Archetype::CircuitBreaker, "CircuitBreakerEY162", &[("limit", 10)]),
            ],
            vec![
                Connection::power("Battery1", "CircuitBreakerEY162"),
                Connection::power("CircuitBreakerEY162", "BankOne"),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn clock_examples() {
        assert_eq!(clock_config(&[100, 200, 300]).unwrap(), CyclicClock { tick: 100, cycle: 600 });
        assert_eq!(clock_config(&[7]).unwrap(), CyclicClock { tick: 7, cycle: 7 });
        assert_eq!(clock_config(&[4, 6]).unwrap(), CyclicClock { tick: 2, cycle: 12 });
        assert_eq!(clock_config(&[]), Err(ClockError::NoPeriods));
        assert_eq!(clock_config(&[3, 0]), Err(ClockError::ZeroPeriod));
    }

    #[test]
    fn unconnected_product_size() {
        let m = compose(
            vec![inst(Archetype::Battery, "B", &[("capacity", 4)]), inst(Archetype::Inverter, "I", &[])],
            vec![],
            vec![],
        )
        .unwrap();
        // the inverter's unbound supply becomes a boolean free input
        let product: u128 = m.vars.iter().take(2).map(|v| v.domain.len() as u128).product();
        assert_eq!(product, 6);
        assert_eq!(m.free_inputs.len(), 1);
        assert!(m.clock.is_none());
    }

    #[test]
    fn sums_flow_through_the_breaker() {
        let m = bank_chain();
        let init = m.initial_states();
        assert_eq!(init.len(), 1);
        let mut s = init[0].clone();
        s[m.instance_index("BankOne").unwrap()] = 11;
        let vals = m.valuation(&s).unwrap();
        let get = |n: &str| vals[m.label_index(n).unwrap()];
        assert_eq!(get("CircuitBreakerEY162.draw"), Value::Int(11));
        assert_eq!(get("Battery1.draw"), Value::Int(11));
        assert_eq!(get("CircuitBreakerEY162.supplyingPower"), Value::Bool(true));
        let next = m.successors(&s).unwrap();
        assert_eq!(next.len(), 13);
        let cb = m.instance_index("CircuitBreakerEY162").unwrap();
        assert!(next.iter().all(|n| m.vars[cb].domain.value(n[cb] as usize) == sym("broken")));
    }

    #[test]
    fn open_relay_branches() {
        let m = compose(
            vec![inst(Archetype::Battery, "B", &[("capacity", 4)]), inst(Archetype::Relay, "R", &[])],
            vec![Connection::power("B", "R")],
            vec![],
        )
        .unwrap();
        let r = m.instance_index("R").unwrap();
        let mut s = m.initial_states()[0].clone();
        s[r] = m.vars[r].domain.index_of(sym("open")).unwrap() as u32;
        let next: Vec<Value> =
            m.successors(&s).unwrap().iter().map(|n| m.vars[r].domain.value(n[r] as usize)).collect();
        assert!(next.contains(&sym("open")) && next.contains(&sym("closed")));
    }

    #[test]
    fn combinational_cycle_is_rejected() {
        let e = compose(
            vec![inst(Archetype::Relay, "A", &[]), inst(Archetype::Relay, "B", &[])],
            vec![Connection::power("A", "B"), Connection::power("B", "A")],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(e, ComposeError::CombinationalCycle(ref c) if c.len() >= 3), "{e}");
    }

    #[test]
    fn double_driver_is_rejected() {
        let e = compose(
            vec![
                inst(Archetype::Relay, "A", &[]),
                inst(Archetype::Relay, "B", &[]),
                inst(Archetype::Actuator, "F", &[]),
            ],
            vec![Connection::power("A", "F"), Connection::power("B", "F")],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(e, ComposeError::MultipleDrivers { .. }));
    }

    #[test]
    fn timed_instances_get_a_clock() {
        let mut a = inst(Archetype::Sensor, "A", &[]);
        a.period = Some(100);
        let mut b = inst(Archetype::Sensor, "B", &[]);
        b.period = Some(200);
        let mut c = inst(Archetype::Sensor, "C", &[]);
        c.period = Some(300);
        let m = compose(vec![a, b, c], vec![], vec![]).unwrap();
        assert_eq!(m.clock, Some(CyclicClock { tick: 100, cycle: 600 }));
        let s = m.initial_states()[0].clone();
        let vals = m.valuation(&s).unwrap();
        assert_eq!(vals[m.label_index("clock").unwrap()], Value::Int(0));
        let next = &m.successors(&s).unwrap()[0];
        assert_eq!(m.valuation(next).unwrap()[m.label_index("clock").unwrap()], Value::Int(100));
    }

    #[test]
    fn codec_round_trips() {
        let m = bank_chain();
        for s in m.successors(&m.initial_states()[0]).unwrap() {
            assert_eq!(m.codec().decode(&m.codec().encode(&s)), s);
        }
    }

    #[test]
    fn predicates_resolve_against_labels() {
        let m = bank_chain();
        assert!(m.compile_pred(&parse_predicate("CircuitBreakerEY162.state = connected").unwrap()).is_ok());
        assert!(matches!(
            m.compile_pred(&parse_predicate("Nope.state = connected").unwrap()),
            Err(PredError::UnknownVariable(_))
        ));
        assert!(matches!(
            m.compile_pred(&parse_predicate("CircuitBreakerEY162.state = conected").unwrap()),
            Err(PredError::UnknownValue { .. })
        ));
    }

    #[test]
    fn composition_order_does_not_matter() {
        let a = bank_chain();
        let b = compose(
            vec![
                inst(Archetype::CircuitBreaker, "CircuitBreakerEY162", &[("limit", 10)]),
                inst(Archetype::Battery, "Battery1", &[("capacity", 4)]),
                inst(Archetype::MergedLoadBank, "BankOne", &[("drawlimit", 12)]),
            ],
            vec![
                Connection::power("CircuitBreakerEY162", "BankOne"),
                Connection::power("Battery1", "CircuitBreakerEY162"),
            ],
            vec![],
        )
        .unwrap();
        assert_eq!(a.label_names(), b.label_names());
        let s = a.initial_states()[0].clone();
        assert_eq!(a.successors(&s).unwrap(), b.successors(&s).unwrap());
    }
}
