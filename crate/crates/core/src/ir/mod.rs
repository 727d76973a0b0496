//! Domain types shared by every pipeline stage.

pub mod archetype;
pub mod expr;
pub mod formula;
pub mod graph;
pub mod parse;
pub mod trace;
pub mod value;

pub use archetype::{
    Archetype, ArchetypeSpec, Choice, ChoiceKind, ChoiceTargets, LocalExpr, LocalRef, Target, Transition,
};
pub use expr::{BinOp, EvalError, Expr};
pub use formula::{Assertion, AssertionKind, Flavor, Formula, Pred};
pub use graph::{validate_graph, Block, BlockPath, ComponentGraph, Endpoint, Line, Port, PortDir, Violation};
pub use parse::{parse_formula, parse_predicate, ParseError};
pub use trace::{Trace, TraceKind};
pub use value::{intern, Domain, Value};
