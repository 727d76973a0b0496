//! Test-only reference implementations, coded separately from the library:
//! per-archetype electrical rules written out by hand and a plain
//! breadth-first reachability search over explicit states.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::path::PathBuf;

use sliced::archetype::Instance;
use sliced::assertgen::gen_auto;
use sliced::checker::{check_invariant, CheckOptions, Outcome};
use sliced::composer::CompositeMachine;
use sliced::config::Config;
use sliced::ingest::ConnectionKind;
use sliced::ir::{Archetype, Assertion, AssertionKind, ChoiceKind, EvalError, Flavor, Formula, Pred, Value};
use sliced::ops::{apply_merges, MergeSpec};
use sliced::pipeline::{load_file, Model};

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn corpus(name: &str) -> PathBuf {
    root().join("corpus").join(name)
}

pub fn corpus_config() -> Config {
    Config::load(&corpus("sliced.json")).expect("corpus config")
}

pub fn load(name: &str) -> Model {
    load_file(&corpus(name), &corpus_config()).expect("corpus model loads")
}

/// Every model file in the corpus.
pub fn corpus_models() -> Vec<String> {
    let mut out: Vec<String> = std::fs::read_dir(root().join("corpus"))
        .expect("corpus dir")
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json") && n != "sliced.json")
        .collect();
    out.sort();
    out
}

/// Compares `actual` with a golden file; `UPDATE_GOLDEN=1` rewrites it.
pub fn golden(name: &str, actual: &str) {
    let path = root().join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden mismatch: {}", path.display());
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// One component as the oracle sees it.
#[derive(Debug, Clone)]
pub struct Part {
    pub name: String,
    pub tag: Archetype,
    pub params: BTreeMap<String, i64>,
    pub initial: Vec<Value>,
    pub faults: bool,
    pub user_actions: bool,
    pub period: Option<u64>,
    /// Values a load bank may draw.
    pub bank_values: Vec<i64>,
}

impl Part {
    pub fn from_instance(i: &Instance) -> Part {
        Part {
            name: i.name.clone(),
            tag: i.spec.tag,
            params: i.spec.params.iter().map(|p| (p.name.clone(), p.value)).collect(),
            initial: i.spec.initial.clone(),
            faults: i.spec.choices.iter().any(|c| c.kind == ChoiceKind::Fault),
            user_actions: i.spec.choices.iter().any(|c| c.kind == ChoiceKind::UserAction),
            period: i.period,
            bank_values: if i.spec.tag == Archetype::MergedLoadBank {
                i.spec.domain.values().filter_map(Value::as_int).collect()
            } else {
                Vec::new()
            },
        }
    }

    fn states(&self) -> &'static [&'static str] {
        match self.tag {
            Archetype::Battery => &["nominal", "dead", "underRepair"],
            Archetype::CircuitBreaker => &["connected", "broken"],
            Archetype::Relay => &["open", "closed", "stuckOpen", "stuckClosed"],
            Archetype::Inverter => &["nominal", "failed"],
            Archetype::Actuator | Archetype::Load => &["nominal", "nopower", "faultyResistance"],
            Archetype::Sensor => &["nominal", "faulty"],
            Archetype::MergedLoadBank => &[],
        }
    }
}

#[derive(Debug, Clone)]
struct Link {
    source: usize,
    sink: usize,
    power: bool,
}

#[derive(Debug, Clone)]
pub struct OracleChannel {
    pub name: String,
    producer: usize,
    consumer: usize,
    capacity: i64,
}

/// Explicit-state reference model.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub parts: Vec<Part>,
    links: Vec<Link>,
    channels: Vec<OracleChannel>,
    /// Part indices that read a free supply input.
    free: Vec<usize>,
    tick: u64,
    phases: u64,
}

/// State vector: one value per part, then free inputs, channel counts, phase.
pub type OState = Vec<Value>;

impl Oracle {
    pub fn from_machine(m: &CompositeMachine) -> Oracle {
        let parts: Vec<Part> = m.instances.iter().map(Part::from_instance).collect();
        let idx = |n: &str| parts.iter().position(|p| p.name == n).expect("known part");
        let links: Vec<Link> = m
            .connections
            .iter()
            .map(|c| Link { source: idx(&c.source), sink: idx(&c.sink), power: c.kind == ConnectionKind::Power })
            .collect();
        let channels = m
            .channels
            .iter()
            .map(|c| OracleChannel {
                name: c.name.clone(),
                producer: idx(&c.producer),
                consumer: idx(&c.consumer),
                capacity: i64::from(c.capacity),
            })
            .collect();
        let free =
            (0..parts.len()).filter(|&i| m.instances[i].spec.upstream && !links.iter().any(|l| l.sink == i)).collect();
        let periods: Vec<u64> = parts.iter().filter_map(|p| p.period).collect();
        let (tick, phases) = if periods.is_empty() {
            (0, 1)
        } else {
            let deadlines = m.instances.iter().filter_map(|i| i.deadline);
            let tick = periods.iter().copied().chain(deadlines).fold(0, gcd);
            let cycle = periods.iter().copied().fold(1, |a: u64, b| a / gcd(a, b) * b);
            (tick, cycle / tick)
        };
        Oracle { parts, links, channels, free, tick, phases }
    }

    fn upstream(&self, i: usize) -> Option<usize> {
        self.links.iter().find(|l| l.sink == i).map(|l| l.source)
    }

    fn feeds(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.links.iter().filter(move |l| l.source == i && l.power).map(|l| l.sink)
    }

    fn state_is(&self, s: &OState, i: usize, name: &str) -> bool {
        s[i] == Value::sym(name)
    }

    /// Whether power reaches part `i`'s input.
    fn input_powered(&self, s: &OState, i: usize) -> bool {
        match self.upstream(i) {
            Some(j) => self.supplies(s, j),
            None => match self.free.iter().position(|&f| f == i) {
                Some(k) => s[self.parts.len() + k] == Value::Bool(true),
                None => false,
            },
        }
    }

    fn supplies(&self, s: &OState, i: usize) -> bool {
        match self.parts[i].tag {
            Archetype::Battery => self.state_is(s, i, "nominal"),
            Archetype::CircuitBreaker => self.state_is(s, i, "connected") && self.input_powered(s, i),
            Archetype::Relay => {
                (self.state_is(s, i, "closed") || self.state_is(s, i, "stuckClosed")) && self.input_powered(s, i)
            }
            Archetype::Inverter => self.state_is(s, i, "nominal") && self.input_powered(s, i),
            _ => false,
        }
    }

    fn downstream_draw(&self, s: &OState, i: usize) -> i64 {
        self.feeds(i).map(|j| self.draw(s, j)).sum()
    }

    fn draw(&self, s: &OState, i: usize) -> i64 {
        let p = &self.parts[i];
        match p.tag {
            Archetype::Battery => self.downstream_draw(s, i),
            Archetype::CircuitBreaker => {
                if self.state_is(s, i, "connected") {
                    self.downstream_draw(s, i)
                } else {
                    0
                }
            }
            Archetype::Relay => {
                if self.state_is(s, i, "closed") || self.state_is(s, i, "stuckClosed") {
                    self.downstream_draw(s, i)
                } else {
                    0
                }
            }
            Archetype::Inverter => {
                if self.state_is(s, i, "nominal") {
                    self.downstream_draw(s, i)
                } else {
                    0
                }
            }
            Archetype::Actuator | Archetype::Load => {
                let (nominal, faulty) = if p.tag == Archetype::Actuator {
                    (1, 2)
                } else {
                    let r = p.params["rating"];
                    (r, r + 1)
                };
                if !self.input_powered(s, i) || self.state_is(s, i, "nopower") {
                    0
                } else if self.state_is(s, i, "nominal") {
                    nominal
                } else {
                    faulty
                }
            }
            Archetype::MergedLoadBank => s[i].as_int().expect("bank draw"),
            Archetype::Sensor => 0,
        }
    }

    /// Every label the machine exposes, computed from first principles.
    pub fn labels(&self, s: &OState) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        for (i, p) in self.parts.iter().enumerate() {
            let n = &p.name;
            match p.tag {
                Archetype::MergedLoadBank => {
                    out.insert(format!("{n}.draw"), s[i]);
                }
                Archetype::Sensor => {
                    out.insert(format!("{n}.state"), s[i]);
                    let observed = self.state_is(s, i, "nominal") && self.input_powered(s, i);
                    out.insert(format!("{n}.observed"), Value::Bool(observed));
                }
                Archetype::Actuator | Archetype::Load => {
                    out.insert(format!("{n}.state"), s[i]);
                    out.insert(format!("{n}.draw"), Value::Int(self.draw(s, i)));
                }
                _ => {
                    out.insert(format!("{n}.state"), s[i]);
                    out.insert(format!("{n}.supplyingPower"), Value::Bool(self.supplies(s, i)));
                    out.insert(format!("{n}.draw"), Value::Int(self.draw(s, i)));
                }
            }
        }
        let base = self.parts.len();
        for (k, &i) in self.free.iter().enumerate() {
            out.insert(format!("{}_free.supplyingPower", self.parts[i].name), s[base + k]);
        }
        let base = base + self.free.len();
        for (k, c) in self.channels.iter().enumerate() {
            out.insert(format!("{}.count", c.name), s[base + k]);
        }
        if self.tick > 0 {
            let phase = s[base + self.channels.len()].as_int().unwrap();
            out.insert("clock".into(), Value::Int(phase * self.tick as i64));
        }
        out
    }

    pub fn initial(&self) -> Vec<OState> {
        let mut out: Vec<OState> = vec![Vec::new()];
        let mut extend = |choices: Vec<Value>| {
            out = out
                .iter()
                .flat_map(|s| {
                    choices.iter().map(move |c| {
                        let mut n = s.clone();
                        n.push(*c);
                        n
                    })
                })
                .collect();
        };
        for p in &self.parts {
            let mut init = p.initial.clone();
            init.sort_by_key(|v| v.to_string());
            init.dedup();
            extend(init);
        }
        for _ in &self.free {
            extend(vec![Value::Bool(false), Value::Bool(true)]);
        }
        for _ in &self.channels {
            extend(vec![Value::Int(0)]);
        }
        if self.tick > 0 {
            extend(vec![Value::Int(0)]);
        }
        out
    }

    fn active(&self, period: Option<u64>, phase: i64) -> bool {
        match period {
            Some(p) if self.tick > 0 => (phase as u64).is_multiple_of(p / self.tick),
            _ => false,
        }
    }

    /// Possible next values of part `i`.
    fn next_part(&self, s: &OState, i: usize) -> Vec<Value> {
        let p = &self.parts[i];
        let cur = s[i];
        let is = |n: &str| cur == Value::sym(n);
        let sym = Value::sym;
        let mut out = Vec::new();
        match p.tag {
            Archetype::Battery => {
                let d = self.draw(s, i);
                out.push(if d > p.params["capacity"] {
                    sym("dead")
                } else if is("dead") && d == 0 {
                    sym("underRepair")
                } else if is("underRepair") && d == 0 {
                    sym("nominal")
                } else {
                    cur
                });
            }
            Archetype::CircuitBreaker => {
                out.push(if self.draw(s, i) > p.params["limit"] { sym("broken") } else { cur });
            }
            Archetype::Relay => {
                out.push(cur);
                if p.user_actions {
                    if is("open") {
                        out.push(sym("closed"));
                    }
                    if is("closed") {
                        out.push(sym("open"));
                    }
                }
                if p.faults {
                    if is("open") {
                        out.push(sym("stuckOpen"));
                    }
                    if is("closed") {
                        out.push(sym("stuckClosed"));
                    }
                }
            }
            Archetype::Inverter => {
                out.push(cur);
                if p.faults && is("nominal") {
                    out.push(sym("failed"));
                }
            }
            Archetype::Actuator | Archetype::Load => {
                out.extend([cur, sym("nominal"), sym("nopower")]);
                if p.faults {
                    out.push(sym("faultyResistance"));
                }
            }
            Archetype::Sensor => {
                out.push(cur);
                if p.faults && is("nominal") {
                    out.push(sym("faulty"));
                }
            }
            Archetype::MergedLoadBank => out.extend(p.bank_values.iter().map(|v| Value::Int(*v))),
        }
        out.sort_by_key(|v| v.to_string());
        out.dedup();
        out
    }

    pub fn successors(&self, s: &OState) -> Vec<OState> {
        let mut options: Vec<Vec<Value>> = (0..self.parts.len()).map(|i| self.next_part(s, i)).collect();
        for _ in &self.free {
            options.push(vec![Value::Bool(false), Value::Bool(true)]);
        }
        let base = self.parts.len() + self.free.len();
        let phase = if self.tick > 0 { s[base + self.channels.len()].as_int().unwrap() } else { 0 };
        for (k, c) in self.channels.iter().enumerate() {
            let count = s[base + k].as_int().unwrap();
            let produce = self.active(self.parts[c.producer].period, phase);
            let consume = self.active(self.parts[c.consumer].period, phase);
            let next = match (produce, consume) {
                (true, false) => (count + 1).min(c.capacity + 1),
                (false, true) => (count - 1).max(0),
                _ => count,
            };
            options.push(vec![Value::Int(next)]);
        }
        if self.tick > 0 {
            options.push(vec![Value::Int((phase + 1) % self.phases as i64)]);
        }
        let mut out: Vec<OState> = vec![Vec::new()];
        for opts in options {
            out = out
                .iter()
                .flat_map(|s| {
                    opts.iter().map(move |v| {
                        let mut n = s.clone();
                        n.push(*v);
                        n
                    })
                })
                .collect();
        }
        out
    }

    pub fn holds(&self, p: &Pred, s: &OState) -> bool {
        let labels = self.labels(s);
        let v = p
            .eval(&mut |name: &String| match labels.get(name) {
                Some(v) => Ok(*v),
                None if !name.contains('.') => Ok(Value::sym(name)),
                None => Err(EvalError::Unbound(name.clone())),
            })
            .expect("predicate evaluates");
        v == Value::Bool(true)
    }

    /// Number of reachable states.
    pub fn reachable(&self) -> usize {
        self.explore(|_| false).1
    }

    /// Length (states) of the shortest path to a state violating `p`, if any.
    pub fn shortest_violation(&self, p: &Pred) -> Option<usize> {
        self.explore(|s| !self.holds(p, s)).0
    }

    fn explore(&self, stop: impl Fn(&OState) -> bool) -> (Option<usize>, usize) {
        let mut seen: HashMap<OState, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        for s in self.initial() {
            if seen.contains_key(&s) {
                continue;
            }
            if stop(&s) {
                return (Some(1), seen.len() + 1);
            }
            seen.insert(s.clone(), 1);
            queue.push_back(s);
        }
        while let Some(s) = queue.pop_front() {
            let d = seen[&s];
            for n in self.successors(&s) {
                if seen.contains_key(&n) {
                    continue;
                }
                if stop(&n) {
                    return (Some(d + 1), seen.len() + 1);
                }
                seen.insert(n.clone(), d + 1);
                queue.push_back(n);
            }
        }
        (None, seen.len())
    }

    /// All reachable states.
    pub fn reachable_states(&self) -> Vec<OState> {
        let mut seen: HashSet<OState> = HashSet::new();
        let mut queue: VecDeque<OState> = self.initial().into_iter().collect();
        let mut out = Vec::new();
        while let Some(s) = queue.pop_front() {
            if !seen.insert(s.clone()) {
                continue;
            }
            queue.extend(self.successors(&s));
            out.push(s);
        }
        out
    }
}

/// The machine state of a trace step as a label map.
pub fn step_labels(t: &sliced::ir::Trace, k: usize) -> BTreeMap<String, Value> {
    t.vars.iter().cloned().zip(t.steps[k].iter().copied()).collect()
}

pub fn pred(text: &str) -> Pred {
    sliced::ir::parse_predicate(text).expect("predicate parses")
}

/// Sets of boundary-value sequences of each length `1..=max_len`, over
/// paths that stay inside `keep`.
pub fn boundary_sequences(
    oracle: &Oracle,
    keep: impl Fn(&OState) -> bool,
    boundary: impl Fn(&OState) -> i64,
    max_len: usize,
) -> Vec<HashSet<Vec<i64>>> {
    let mut index: HashMap<OState, usize> = HashMap::new();
    let mut states: Vec<OState> = Vec::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut intern = |s: OState, states: &mut Vec<OState>, queue: &mut VecDeque<usize>| -> usize {
        *index.entry(s.clone()).or_insert_with(|| {
            states.push(s);
            queue.push_back(states.len() - 1);
            states.len() - 1
        })
    };
    let initial: Vec<usize> =
        oracle.initial().into_iter().filter(|s| keep(s)).map(|s| intern(s, &mut states, &mut queue)).collect();
    let mut succ: Vec<Vec<usize>> = Vec::new();
    while let Some(i) = queue.pop_front() {
        let next: Vec<OState> = oracle.successors(&states[i]).into_iter().filter(|s| keep(s)).collect();
        let ids = next.into_iter().map(|s| intern(s, &mut states, &mut queue)).collect();
        if succ.len() <= i {
            succ.resize(i + 1, Vec::new());
        }
        succ[i] = ids;
    }
    succ.resize(states.len(), Vec::new());
    let value: Vec<i64> = states.iter().map(&boundary).collect();
    let words = states.len().div_ceil(64);
    let split = |set: &[u64]| -> BTreeMap<i64, Vec<u64>> {
        let mut out: BTreeMap<i64, Vec<u64>> = BTreeMap::new();
        for i in 0..states.len() {
            if set[i / 64] >> (i % 64) & 1 == 1 {
                out.entry(value[i]).or_insert_with(|| vec![0; words])[i / 64] |= 1 << (i % 64);
            }
        }
        out
    };
    let mut start = vec![0u64; words];
    for i in initial {
        start[i / 64] |= 1 << (i % 64);
    }
    let mut layer: Vec<(Vec<i64>, Vec<u64>)> = split(&start).into_iter().map(|(v, s)| (vec![v], s)).collect();
    let mut image: HashMap<Vec<u64>, BTreeMap<i64, Vec<u64>>> = HashMap::new();
    let mut out = vec![layer.iter().map(|(k, _)| k.clone()).collect::<HashSet<_>>()];
    for _ in 1..max_len {
        let mut next = Vec::new();
        for (seq, set) in &layer {
            let parts = image.entry(set.clone()).or_insert_with(|| {
                let mut union = vec![0u64; words];
                for i in 0..states.len() {
                    if set[i / 64] >> (i % 64) & 1 == 1 {
                        for &j in &succ[i] {
                            union[j / 64] |= 1 << (j % 64);
                        }
                    }
                }
                split(&union)
            });
            for (v, s) in parts.iter() {
                let mut longer = seq.clone();
                longer.push(*v);
                next.push((longer, s.clone()));
            }
        }
        out.push(next.iter().map(|(k, _)| k.clone()).collect());
        layer = next;
    }
    out
}

pub const REACHABLE_LIMIT: usize = 100_000;

/// Every corpus machine, plus the auto-merged version where one exists.
pub fn machines() -> Vec<(String, CompositeMachine)> {
    let mut out = Vec::new();
    for name in corpus_models() {
        let m = load(&name).machine;
        let (merged, done) = apply_merges(&m, &MergeSpec::Auto, 1 << 20).unwrap();
        out.push((name.clone(), m));
        if !done.is_empty() {
            out.push((format!("{name} merged"), merged));
        }
    }
    out
}

pub fn to_oracle_state(m: &CompositeMachine, s: &[u32]) -> OState {
    m.vars.iter().zip(s).map(|(v, &x)| v.domain.value(x as usize)).collect()
}

pub fn to_machine_state(m: &CompositeMachine, s: &OState) -> Vec<u32> {
    m.vars.iter().zip(s).map(|(v, x)| v.domain.index_of(*x).expect("in domain") as u32).collect()
}

fn extra_invariants(m: &CompositeMachine) -> Vec<&'static str> {
    let labels: BTreeSet<String> = m.label_names().into_iter().collect();
    let mut out = Vec::new();
    for (label, text) in [
        ("CircuitBreakerEY162.state", "CircuitBreakerEY162.state = connected"),
        ("Battery1.draw", "Battery1.draw <= 2"),
        ("Battery1.state", "Battery1.state != underRepair"),
        ("RelayA.state", "!(RelayA.state = closed & RelayB.state = closed)"),
        ("chan.count", "chan.count < 2"),
        ("clock", "clock < 500"),
    ] {
        if labels.contains(label) {
            out.push(text);
        }
    }
    out
}

/// Checks every invariant of the auto suite plus a few hand-written ones
/// with the library and the oracle; panics on any disagreement.
pub fn compare_invariants(name: &str, m: &CompositeMachine) -> usize {
    let opts = CheckOptions { parallel: false, ..CheckOptions::default() };
    let mut compared = 0;
    let oracle = Oracle::from_machine(m);
    let mut asserts: Vec<Assertion> = gen_auto(m).unwrap();
    for text in extra_invariants(m) {
        asserts.push(Assertion {
            formula: Formula::globally(Formula::prop(pred(text))),
            kind: AssertionKind::ErrorDiscovery,
            flavor: Flavor::Safety,
            provenance: text.into(),
        });
    }
    for a in asserts {
        let Some(p) = a.formula.as_invariant() else { continue };
        let expected = oracle.shortest_violation(p);
        let verdict = check_invariant(m, &a, opts).unwrap();
        match (&verdict.outcome, expected) {
            (Outcome::Verified, None) => {}
            (Outcome::Falsified(t), Some(len)) => {
                assert_eq!(t.steps.len(), len, "{name}: {}", a.provenance);
                let last = step_labels(t, t.steps.len() - 1);
                let holds =
                    p.eval(&mut |r: &String| Ok(last.get(r).copied().unwrap_or_else(|| Value::sym(r)))).unwrap();
                assert_eq!(holds, Value::Bool(false), "{name}: final state must violate");
            }
            (got, want) => panic!("{name}: {} gave {got:?}, oracle {want:?}", a.provenance),
        }
        compared += 1;
    }
    compared
}
