//! Explicit-state analysis: invariants by breadth-first reachability,
//! bounded lassos for `G F q`, forbidden sequences, and plan search.
//!
//! Each BFS layer may be expanded in parallel, but successors are merged
//! into the visited set in frontier order, so verdicts, statistics and
//! traces are identical to a single-threaded run.

use std::collections::{HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use thiserror::Error;

use crate::composer::{CExpr, CompositeMachine, PredError, StateVec};
use crate::ir::{Assertion, AssertionKind, EvalError, Expr, Trace, TraceKind};

pub const DEFAULT_STATE_CAP: usize = 50_000_000;
pub const DEFAULT_BOUND: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    pub cap: usize,
    /// Lasso length limit for `G F q`.
    pub bound: usize,
    pub parallel: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { cap: DEFAULT_STATE_CAP, bound: DEFAULT_BOUND, parallel: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlanOptions {
    /// Forbid repeating a user action on the same component in consecutive steps.
    pub toggle_guard: bool,
    /// Predicates every state of the plan must satisfy.
    pub keep: Vec<CExpr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Stats {
    pub states: usize,
    pub frontier_peak: usize,
    /// BFS layers expanded.
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Verified,
    Falsified(Trace),
    BoundExhausted(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub outcome: Outcome,
    pub stats: Stats,
}

impl Verdict {
    pub fn trace(&self) -> Option<&Trace> {
        match &self.outcome {
            Outcome::Falsified(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_verified(&self) -> bool {
        self.outcome == Outcome::Verified
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("state cap of {cap} exceeded after {} states at depth {}", .stats.states, .stats.depth)]
    StateCapExceeded { cap: usize, stats: Stats },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pred(#[from] PredError),
    #[error("unsupported assertion shape `{0}` (expected G p, G F q or a forbidden sequence)")]
    Unsupported(String),
}

struct Node {
    packed: Box<[u64]>,
    parent: u32,
    mask: u64,
}

/// Unseen successor: packed key, toggle mask, classification.
type Successor = (Box<[u64]>, u64, Expanded);

#[derive(Debug)]
struct Expanded {
    target: bool,
    allowed: bool,
}

struct Search<'a> {
    m: &'a CompositeMachine,
    opts: CheckOptions,
    keep: &'a [CExpr],
    toggle_vars: Vec<usize>,
}

impl Search<'_> {
    fn classify(&self, s: &[u32], target: &CExpr) -> Result<Expanded, CheckError> {
        let vals = self.m.valuation(s)?;
        let mut allowed = true;
        for k in self.keep {
            if !self.m.holds(k, &vals)? {
                allowed = false;
                break;
            }
        }
        let target = allowed && self.m.holds(target, &vals)?;
        Ok(Expanded { target, allowed })
    }

    fn mask(&self, from: &[u32], to: &[u32]) -> u64 {
        let mut mask = 0u64;
        for (bit, &v) in self.toggle_vars.iter().enumerate() {
            if self.m.is_user_action(v, from[v], to[v]) {
                mask |= 1 << bit;
            }
        }
        mask
    }

    /// Visited-set key: the packed state, plus the toggle mask when one is tracked.
    fn key(&self, s: &[u32], mask: u64) -> Box<[u64]> {
        let packed = self.m.codec().encode(s);
        if self.toggle_vars.is_empty() {
            packed
        } else {
            let mut k = packed.into_vec();
            k.push(mask);
            k.into_boxed_slice()
        }
    }

    /// Shortest path from an initial state to a state satisfying `target`.
    fn shortest(&self, target: &CExpr) -> Result<(Option<Vec<StateVec>>, Stats), CheckError> {
        let codec = self.m.codec();
        let words = codec.words();
        let mut nodes: Vec<Node> = Vec::new();
        let mut seen: HashSet<Box<[u64]>> = HashSet::new();
        let mut stats = Stats::default();
        let path = |nodes: &[Node], mut i: usize| {
            let mut out = Vec::new();
            loop {
                out.push(codec.decode(&nodes[i].packed[..words]));
                if nodes[i].parent == u32::MAX {
                    break;
                }
                i = nodes[i].parent as usize;
            }
            out.reverse();
            out
        };

        let mut frontier = Vec::new();
        for s in self.m.initial_states() {
            let packed = self.key(&s, 0);
            if seen.contains(&packed) {
                continue;
            }
            let e = self.classify(&s, target)?;
            if !e.allowed {
                continue;
            }
            seen.insert(packed.clone());
            nodes.push(Node { packed, parent: u32::MAX, mask: 0 });
            stats.states += 1;
            if e.target {
                return Ok((Some(path(&nodes, nodes.len() - 1)), stats));
            }
            frontier.push(nodes.len() - 1);
        }
        while !frontier.is_empty() {
            stats.frontier_peak = stats.frontier_peak.max(frontier.len());
            stats.depth += 1;
            // successors already visited are dropped before the (costly) valuation
            let expand = |&i: &usize| -> Result<Vec<Successor>, CheckError> {
                let from = codec.decode(&nodes[i].packed[..words]);
                let mut out = Vec::new();
                for n in self.m.successors(&from)? {
                    let mask = if self.toggle_vars.is_empty() { 0 } else { self.mask(&from, &n) };
                    if mask & nodes[i].mask != 0 {
                        continue;
                    }
                    let packed = self.key(&n, mask);
                    if seen.contains(&packed) {
                        continue;
                    }
                    out.push((packed, mask, self.classify(&n, target)?));
                }
                Ok(out)
            };
            let expanded: Vec<Result<Vec<Successor>, CheckError>> = if self.opts.parallel && frontier.len() > 32 {
                frontier.par_iter().map(expand).collect()
            } else {
                frontier.iter().map(expand).collect()
            };
            let mut next = Vec::new();
            for (&parent, succs) in frontier.iter().zip(expanded) {
                for (packed, mask, e) in succs? {
                    if !e.allowed || !seen.insert(packed.clone()) {
                        continue;
                    }
                    nodes.push(Node { packed, parent: parent as u32, mask });
                    stats.states += 1;
                    if e.target {
                        return Ok((Some(path(&nodes, nodes.len() - 1)), stats));
                    }
                    if stats.states > self.opts.cap {
                        return Err(CheckError::StateCapExceeded { cap: self.opts.cap, stats });
                    }
                    next.push(nodes.len() - 1);
                }
            }
            frontier = next;
        }
        Ok((None, stats))
    }
}

fn invariant_of(a: &Assertion) -> Result<&crate::ir::Pred, CheckError> {
    a.formula.as_invariant().ok_or_else(|| CheckError::Unsupported(a.formula.to_string()))
}

/// Exhaustive BFS for `G p`; a falsifying trace is a shortest violating path.
pub fn check_invariant(m: &CompositeMachine, a: &Assertion, opts: CheckOptions) -> Result<Verdict, CheckError> {
    let p = m.compile_pred(invariant_of(a)?)?;
    let search = Search { m, opts, keep: &[], toggle_vars: Vec::new() };
    let (path, stats) = search.shortest(&Expr::not(p))?;
    let outcome = match path {
        Some(states) => Outcome::Falsified(m.to_trace(TraceKind::Counterexample, &states)?),
        None => Outcome::Verified,
    };
    Ok(Verdict { outcome, stats })
}

/// Shortest plan reaching the goal of a path-discovery assertion `G(!goal)`.
pub fn find_plan(
    m: &CompositeMachine,
    a: &Assertion,
    opts: CheckOptions,
    plan: &PlanOptions,
) -> Result<Verdict, CheckError> {
    let never = m.compile_pred(invariant_of(a)?)?;
    let mut toggle_vars = Vec::new();
    if plan.toggle_guard {
        toggle_vars = m.user_action_vars();
        toggle_vars.truncate(64);
    }
    let search = Search { m, opts, keep: &plan.keep, toggle_vars };
    let (path, stats) = search.shortest(&Expr::not(never))?;
    let outcome = match path {
        Some(states) => Outcome::Falsified(m.to_trace(TraceKind::Plan, &states)?),
        None => Outcome::Verified,
    };
    Ok(Verdict { outcome, stats })
}

struct Graph {
    index: HashMap<Box<[u64]>, usize>,
    states: Vec<StateVec>,
    dist: Vec<usize>,
    parent: Vec<usize>,
    good: Vec<bool>,
    succ: Vec<Vec<usize>>,
}

impl Graph {
    #[allow(clippy::too_many_arguments)]
    fn add(
        &mut self,
        m: &CompositeMachine,
        q: &CExpr,
        s: StateVec,
        d: usize,
        p: usize,
        queue: &mut VecDeque<usize>,
        cap: usize,
    ) -> Result<usize, CheckError> {
        let key = m.codec().encode(&s);
        if let Some(&i) = self.index.get(&key) {
            return Ok(i);
        }
        let vals = m.valuation(&s)?;
        self.good.push(m.holds(q, &vals)?);
        let i = self.states.len();
        self.index.insert(key, i);
        self.states.push(s);
        self.dist.push(d);
        self.parent.push(p);
        self.succ.push(Vec::new());
        queue.push_back(i);
        if self.states.len() > cap {
            return Err(CheckError::StateCapExceeded {
                cap,
                stats: Stats { states: self.states.len(), frontier_peak: queue.len(), depth: d },
            });
        }
        Ok(i)
    }
}

/// Bounded lasso search for `G F q`.
///
/// Falsified when a reachable cycle avoiding `q` can be entered with a
/// lasso of at most `opts.bound` states. Verified when the full reachable
/// graph has no such cycle at all. Otherwise the only lassos are longer
/// than the bound and the verdict is `BoundExhausted`.
pub fn check_liveness_bounded(m: &CompositeMachine, a: &Assertion, opts: CheckOptions) -> Result<Verdict, CheckError> {
    let q = a.formula.as_recurrence().ok_or_else(|| CheckError::Unsupported(a.formula.to_string()))?;
    let q = m.compile_pred(q)?;
    let mut g = Graph {
        index: HashMap::new(),
        states: Vec::new(),
        dist: Vec::new(),
        parent: Vec::new(),
        good: Vec::new(),
        succ: Vec::new(),
    };
    let mut stats = Stats::default();
    let mut queue = VecDeque::new();
    for s in m.initial_states() {
        g.add(m, &q, s, 0, usize::MAX, &mut queue, opts.cap)?;
    }
    while let Some(i) = queue.pop_front() {
        stats.frontier_peak = stats.frontier_peak.max(queue.len() + 1);
        let d = g.dist[i];
        stats.depth = stats.depth.max(d);
        let next = m.successors(&g.states[i])?;
        let mut out = Vec::with_capacity(next.len());
        for n in next {
            out.push(g.add(m, &q, n, d + 1, i, &mut queue, opts.cap)?);
        }
        g.succ[i] = out;
    }
    stats.states = g.states.len();
    let Graph { states, dist, parent, good, succ, .. } = g;

    // peel !q states that cannot stay in !q forever
    let n = states.len();
    let bad: Vec<bool> = good.iter().map(|g| !g).collect();
    let mut out_deg = vec![0usize; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in (0..n).filter(|&i| bad[i]) {
        for &j in &succ[i] {
            if bad[j] {
                out_deg[i] += 1;
                preds[j].push(i);
            }
        }
    }
    let mut alive = bad.clone();
    let mut stack: Vec<usize> = (0..n).filter(|&i| bad[i] && out_deg[i] == 0).collect();
    while let Some(i) = stack.pop() {
        alive[i] = false;
        for &p in &preds[i] {
            out_deg[p] -= 1;
            if out_deg[p] == 0 && alive[p] {
                stack.push(p);
            }
        }
    }
    if !alive.iter().any(|&x| x) {
        return Ok(Verdict { outcome: Outcome::Verified, stats });
    }

    // shortest lasso: minimize dist(s) + shortest !q cycle through s
    let mut candidates: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    candidates.sort_by_key(|&i| (dist[i], i));
    let mut best: Option<(usize, usize, Vec<usize>)> = None;
    for &s in &candidates {
        let limit = best.as_ref().map(|b| b.0).unwrap_or(opts.bound + 1);
        if dist[s] + 1 >= limit {
            break;
        }
        let budget = limit - dist[s] - 1;
        if let Some(cycle) = shortest_cycle(s, &succ, &alive, budget) {
            let total = dist[s] + cycle.len();
            if total < limit {
                best = Some((total, s, cycle));
            }
        }
    }
    let Some((_, s, cycle)) = best else {
        return Ok(Verdict { outcome: Outcome::BoundExhausted(opts.bound), stats });
    };
    let mut stem = Vec::new();
    let mut cur = parent[s];
    while cur != usize::MAX {
        stem.push(cur);
        cur = parent[cur];
    }
    stem.reverse();
    let loop_start = stem.len();
    let order: Vec<StateVec> = stem.into_iter().chain(cycle).map(|i| states[i].clone()).collect();
    let mut trace = m.to_trace(TraceKind::Counterexample, &order)?;
    trace.loop_start = Some(loop_start);
    Ok(Verdict { outcome: Outcome::Falsified(trace), stats })
}

/// Shortest cycle `s -> ... -> s` inside `alive`, as the node list starting
/// at `s` (the closing edge back to `s` is implicit). At most `budget` nodes.
fn shortest_cycle(s: usize, succ: &[Vec<usize>], alive: &[bool], budget: usize) -> Option<Vec<usize>> {
    let mut prev: HashMap<usize, usize> = HashMap::new();
    let mut layer = vec![s];
    let mut len = 1;
    while !layer.is_empty() && len <= budget {
        let mut next = Vec::new();
        for &u in &layer {
            for &v in &succ[u] {
                if !alive[v] {
                    continue;
                }
                if v == s {
                    let mut cyc = vec![u];
                    let mut cur = u;
                    while cur != s {
                        cur = prev[&cur];
                        cyc.push(cur);
                    }
                    cyc.reverse();
                    return Some(cyc);
                }
                if let std::collections::hash_map::Entry::Vacant(e) = prev.entry(v) {
                    e.insert(u);
                    next.push(v);
                }
            }
        }
        layer = next;
        len += 1;
    }
    None
}

/// Checks `!(p1 & X(p2 & ...))`: falsified by a path from an initial state
/// whose i-th state satisfies the i-th predicate.
pub fn check_sequence(m: &CompositeMachine, a: &Assertion, opts: CheckOptions) -> Result<Verdict, CheckError> {
    let preds = a.formula.as_forbidden_sequence().ok_or_else(|| CheckError::Unsupported(a.formula.to_string()))?;
    let preds: Vec<CExpr> = preds.into_iter().map(|p| m.compile_pred(p)).collect::<Result<_, _>>()?;
    let codec = m.codec();
    let mut stats = Stats::default();
    let mut layers: Vec<Vec<(StateVec, usize)>> = Vec::new();
    let mut current: Vec<(StateVec, usize)> = Vec::new();
    for s in m.initial_states() {
        if m.holds(&preds[0], &m.valuation(&s)?)? {
            current.push((s, usize::MAX));
        }
    }
    for p in &preds[1..] {
        stats.states += current.len();
        stats.frontier_peak = stats.frontier_peak.max(current.len());
        if current.is_empty() || stats.states > opts.cap {
            break;
        }
        stats.depth += 1;
        let mut seen = HashSet::new();
        let mut next = Vec::new();
        for (k, (s, _)) in current.iter().enumerate() {
            for n in m.successors(s)? {
                if m.holds(p, &m.valuation(&n)?)? && seen.insert(codec.encode(&n)) {
                    next.push((n, k));
                }
            }
        }
        layers.push(std::mem::replace(&mut current, next));
    }
    if stats.states > opts.cap {
        return Err(CheckError::StateCapExceeded { cap: opts.cap, stats });
    }
    let Some((last, mut back)) = current.first().cloned() else {
        return Ok(Verdict { outcome: Outcome::Verified, stats });
    };
    stats.states += current.len();
    let mut order = vec![last];
    for layer in layers.iter().rev() {
        let (s, b) = &layer[back];
        order.push(s.clone());
        back = *b;
    }
    order.reverse();
    let trace = m.to_trace(TraceKind::Counterexample, &order)?;
    Ok(Verdict { outcome: Outcome::Falsified(trace), stats })
}

/// Dispatches on the assertion's shape.
pub fn check(m: &CompositeMachine, a: &Assertion, opts: CheckOptions) -> Result<Verdict, CheckError> {
    if a.formula.as_invariant().is_some() {
        if a.kind == AssertionKind::PathDiscovery {
            find_plan(m, a, opts, &PlanOptions::default())
        } else {
            check_invariant(m, a, opts)
        }
    } else if a.formula.as_recurrence().is_some() {
        check_liveness_bounded(m, a, opts)
    } else if a.formula.as_forbidden_sequence().is_some() {
        check_sequence(m, a, opts)
    } else {
        Err(CheckError::Unsupported(a.formula.to_string()))
    }
}

/// Whether each consecutive pair of trace steps is a legal transition of `m`.
pub fn first_illegal_step(m: &CompositeMachine, t: &Trace) -> Option<usize> {
    let states: Vec<Option<StateVec>> = (0..t.len()).map(|k| m.state_of(t, k)).collect();
    let init = m.initial_states();
    match &states.first() {
        Some(Some(s)) if init.contains(s) => {}
        Some(_) => return Some(0),
        None => return None,
    }
    for k in 1..states.len() {
        let (Some(prev), Some(cur)) = (&states[k - 1], &states[k]) else { return Some(k) };
        match m.successors(prev) {
            Ok(next) if next.contains(cur) => {}
            _ => return Some(k),
        }
    }
    None
}
