//! End-to-end operations shared by the command line and the C interface.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::assertgen::{gen_auto, gen_path_discovery, type_check, AssertGenError};
use crate::checker::{check, find_plan, CheckError, CheckOptions, Outcome, PlanOptions, Verdict};
use crate::composer::{ComposeError, CompositeMachine, PredError};
use crate::ir::{parse_predicate, Assertion, ChoiceKind, Trace};
use crate::pipeline::PipelineError;
use crate::reducer::{auto_merge, candidate_for, merge, MergeCandidate, ReduceError};
use crate::simulator::SimError;
use crate::smv::{emit_trace, falsified_header, EmitError};

#[derive(Debug, Error)]
pub enum OpError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    AssertGen(#[from] AssertGenError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Check(#[from] CheckError),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error(transparent)]
    Pred(#[from] PredError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot parse `{text}`: {message}")]
    Parse { text: String, message: String },
    #[error("bad assignment `{0}` (expected NAME=STATE)")]
    BadAssignment(String),
}

impl OpError {
    /// True when the failure is an exhausted state budget rather than bad input.
    pub fn is_cap_exceeded(&self) -> bool {
        matches!(self, OpError::Check(CheckError::StateCapExceeded { .. }))
    }
}

/// Which subsystems to collapse before analysis.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum MergeSpec {
    #[default]
    None,
    Sources(Vec<String>),
    Auto,
}

impl MergeSpec {
    pub fn from_flags(sources: Vec<String>, auto: bool) -> MergeSpec {
        match (auto, sources.is_empty()) {
            (true, _) => MergeSpec::Auto,
            (false, true) => MergeSpec::None,
            (false, false) => MergeSpec::Sources(sources),
        }
    }
}

/// Merges the requested subsystems; candidates refer to `m`'s instances.
pub fn apply_merges(
    m: &CompositeMachine,
    spec: &MergeSpec,
    cap: u128,
) -> Result<(CompositeMachine, Vec<MergeCandidate>), ReduceError> {
    match spec {
        MergeSpec::None => Ok((m.clone(), Vec::new())),
        MergeSpec::Auto => auto_merge(m, cap),
        MergeSpec::Sources(sources) => {
            let mut current = m.clone();
            let mut done = Vec::new();
            for s in sources {
                let c = candidate_for(&current, s, cap)?;
                current = merge(&current, &c)?;
                done.push(c);
            }
            Ok((current, done))
        }
    }
}

/// Parses `NAME=STATE` pairs.
pub fn parse_assignments(items: &[String]) -> Result<BTreeMap<String, String>, OpError> {
    items
        .iter()
        .map(|s| match s.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => {
                Ok((k.trim().to_string(), v.trim().to_string()))
            }
            _ => Err(OpError::BadAssignment(s.clone())),
        })
        .collect()
}

pub fn parse_pred(text: &str) -> Result<crate::ir::Pred, OpError> {
    parse_predicate(text).map_err(|e| OpError::Parse { text: text.to_string(), message: e.to_string() })
}

/// Auto-generated assertions, checked against the machine's labels.
pub fn auto_assertions(m: &CompositeMachine) -> Result<Vec<Assertion>, OpError> {
    let asserts = gen_auto(m)?;
    type_check(m, &asserts)?;
    Ok(asserts)
}

#[derive(Debug, Clone)]
pub struct CheckEntry {
    pub assertion: Assertion,
    pub result: Result<Verdict, CheckError>,
}

impl CheckEntry {
    pub fn falsified(&self) -> Option<&Trace> {
        self.result.as_ref().ok().and_then(Verdict::trace)
    }

    pub fn is_verified(&self) -> bool {
        self.result.as_ref().is_ok_and(Verdict::is_verified)
    }

    /// NuSMV-style verdict text, with the trace when falsified.
    pub fn render(&self) -> String {
        let banner = self.assertion.formula.banner();
        match &self.result {
            Ok(v) => match &v.outcome {
                Outcome::Verified => format!("-- specification  {banner}  is true\n"),
                Outcome::Falsified(t) => emit_trace(t, &falsified_header(&self.assertion.formula)),
                Outcome::BoundExhausted(n) => {
                    format!("-- specification  {banner}  is unknown: no lasso of length <= {n}\n")
                }
            },
            Err(CheckError::StateCapExceeded { cap, stats }) => format!(
                "-- specification  {banner}  is unknown: state cap {cap} exceeded after {} states\n",
                stats.states
            ),
            Err(e) => format!("-- specification  {banner}  is unknown: {e}\n"),
        }
    }
}

/// Checks every assertion; per-assertion failures are kept in the entries.
pub fn check_all(m: &CompositeMachine, asserts: &[Assertion], opts: CheckOptions) -> Vec<CheckEntry> {
    asserts.iter().map(|a| CheckEntry { assertion: a.clone(), result: check(m, a, opts) }).collect()
}

/// Summary exit status: 0 all verified, 1 any falsified, 2 otherwise.
pub fn check_status(entries: &[CheckEntry]) -> i32 {
    if entries.iter().any(|e| e.falsified().is_some()) {
        1
    } else if entries.iter().all(CheckEntry::is_verified) {
        0
    } else {
        2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlanRequest {
    /// Instance -> error state it starts in.
    pub failures: BTreeMap<String, String>,
    pub goal: String,
    pub keep: Vec<String>,
    pub toggle_guard: bool,
    pub allow_faults: bool,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    /// The machine the plan runs on: failures applied, faults removed unless allowed.
    pub machine: CompositeMachine,
    pub assertion: Assertion,
    pub verdict: Verdict,
}

impl PlanResult {
    pub fn plan(&self) -> Option<&Trace> {
        self.verdict.trace()
    }

    /// The plan trace followed by one line per user action taken.
    pub fn render(&self) -> String {
        let Some(t) = self.plan() else {
            return format!("-- no plan reaches the goal ({} states explored)\n", self.verdict.stats.states);
        };
        let mut out = emit_trace(t, &format!("-- plan for {}", self.assertion.provenance));
        for (step, action) in user_actions(&self.machine, t) {
            writeln!(out, "-- step {step}: {action}").unwrap();
        }
        out
    }
}

/// `(step, "X.state: a -> b")` for each user action in `t`, 1-based steps.
pub fn user_actions(m: &CompositeMachine, t: &Trace) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for k in 1..t.steps.len() {
        let (Some(prev), Some(cur)) = (m.state_of(t, k - 1), m.state_of(t, k)) else { continue };
        for v in m.user_action_vars() {
            if m.is_user_action(v, prev[v], cur[v]) {
                let name = &m.vars[v].name;
                let dom = &m.vars[v].domain;
                out.push((k + 1, format!("{name}: {} -> {}", dom.value(prev[v] as usize), dom.value(cur[v] as usize))));
            }
        }
    }
    out
}

pub fn plan(m: &CompositeMachine, req: &PlanRequest, opts: CheckOptions) -> Result<PlanResult, OpError> {
    let base = if req.allow_faults { m.clone() } else { m.without(ChoiceKind::Fault)? };
    let goal = parse_pred(&req.goal)?;
    let (machine, assertion) = gen_path_discovery(&base, &req.failures, &goal)?;
    let keep =
        req.keep.iter().map(|k| Ok(machine.compile_pred(&parse_pred(k)?)?)).collect::<Result<Vec<_>, OpError>>()?;
    let verdict = find_plan(&machine, &assertion, opts, &PlanOptions { toggle_guard: req.toggle_guard, keep })?;
    Ok(PlanResult { machine, assertion, verdict })
}
