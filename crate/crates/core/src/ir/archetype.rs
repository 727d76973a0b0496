//! Behavior templates: one finite state machine per component class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::expr::Expr;
use super::value::{Domain, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    Battery,
    Relay,
    CircuitBreaker,
    Actuator,
    Inverter,
    Load,
    Sensor,
    MergedLoadBank,
}

impl Archetype {
    pub const ALL: [Archetype; 8] = [
        Archetype::Battery,
        Archetype::Relay,
        Archetype::CircuitBreaker,
        Archetype::Actuator,
        Archetype::Inverter,
        Archetype::Load,
        Archetype::Sensor,
        Archetype::MergedLoadBank,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Battery => "Battery",
            Archetype::Relay => "Relay",
            Archetype::CircuitBreaker => "CircuitBreaker",
            Archetype::Actuator => "Actuator",
            Archetype::Inverter => "Inverter",
            Archetype::Load => "Load",
            Archetype::Sensor => "Sensor",
            Archetype::MergedLoadBank => "MergedLoadBank",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Archetype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown archetype `{s}`"))
    }
}

/// A reference visible inside one component machine.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LocalRef {
    /// The component's own variable, a defined output, or a parameter.
    Own(String),
    /// A field of the upstream (supplying) component.
    Input(String),
    /// A field of the n-th downstream component (1-based).
    Output(usize, String),
    /// Sum of a field over every downstream component.
    OutputSum(String),
}

impl fmt::Display for LocalRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalRef::Own(n) => f.write_str(n),
            LocalRef::Input(field) => write!(f, "input.{field}"),
            LocalRef::Output(i, field) => write!(f, "output{i}.{field}"),
            LocalRef::OutputSum(field) => write!(f, "sum(output*.{field})"),
        }
    }
}

pub type LocalExpr = Expr<LocalRef>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Bound {
    Lit(i64),
    Param(String),
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Lit(i) => write!(f, "{i}"),
            Bound::Param(p) => f.write_str(p),
        }
    }
}

/// How the state variable's domain is written in the template.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DomainSpec {
    Enum(Vec<&'static str>),
    Range(Bound, Bound),
    Explicit(Domain),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParamBinding {
    pub name: String,
    pub value: i64,
    /// Declared inclusive domain of the parameter.
    pub min: i64,
    pub max: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Target {
    Stay,
    Value(Value),
}

/// Deterministic guarded transition; the list is evaluated first-match-wins.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transition {
    pub guard: LocalExpr,
    pub target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChoiceKind {
    /// Operator input such as flipping a relay.
    UserAction,
    /// Spontaneous failure.
    Fault,
    /// Unconstrained environment behavior (e.g. a load changing its draw).
    Environment,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ChoiceTargets {
    All,
    Values(Vec<Value>),
}

/// Non-deterministic alternative added to the deterministic successor.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Choice {
    /// Source state; `None` means any state.
    pub from: Option<Value>,
    pub targets: ChoiceTargets,
    pub kind: ChoiceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchetypeSpec {
    pub tag: Archetype,
    /// Name of the single state variable (`state`, or `draw` for banks).
    pub var: String,
    pub domain_spec: DomainSpec,
    pub domain: Domain,
    /// Nonempty set of initial values.
    pub initial: Vec<Value>,
    pub error_states: Vec<Value>,
    pub params: Vec<ParamBinding>,
    /// Fields read from the upstream component, with their domains.
    pub inputs: Vec<(String, Domain)>,
    /// Whether the template takes the `input` parameter at all.
    pub upstream: bool,
    /// Field collected from downstream components, if any.
    pub downstream: Option<String>,
    pub defines: Vec<(String, LocalExpr)>,
    pub transitions: Vec<Transition>,
    pub choices: Vec<Choice>,
}

impl ArchetypeSpec {
    pub fn param(&self, name: &str) -> Option<i64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn define(&self, name: &str) -> Option<&LocalExpr> {
        self.defines.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn has_output(&self, field: &str) -> bool {
        self.var == field || self.define(field).is_some()
    }

    pub fn is_error(&self, v: Value) -> bool {
        self.error_states.contains(&v)
    }

    /// Values reachable through a choice from `current`.
    pub fn choice_targets(&self, current: Value, filter: impl Fn(ChoiceKind) -> bool) -> Vec<Value> {
        let mut out = Vec::new();
        for c in &self.choices {
            if !filter(c.kind) || c.from.is_some_and(|f| f != current) {
                continue;
            }
            match &c.targets {
                ChoiceTargets::All => out.extend(self.domain.values()),
                ChoiceTargets::Values(vs) => out.extend(vs.iter().copied()),
            }
        }
        out
    }

    pub fn has_choices(&self) -> bool {
        !self.choices.is_empty()
    }

    /// Removes every choice of the given kind.
    pub fn without(&self, kind: ChoiceKind) -> ArchetypeSpec {
        let mut s = self.clone();
        s.choices.retain(|c| c.kind != kind);
        s
    }
}
