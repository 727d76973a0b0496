//! JSON component-graph documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{validate_graph, Archetype, Block, ComponentGraph, Endpoint, Line, Port, PortDir, Violation};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid endpoint `{0}` (expected `path:port`)")]
    BadEndpoint(String),
    #[error("block `{block}`: unknown archetype `{name}`")]
    UnknownArchetype { block: String, name: String },
    #[error("block `{block}`: unknown port direction `{dir}`")]
    BadPortDirection { block: String, dir: String },
    #[error("{}", describe(.0))]
    Invalid(Vec<Violation>),
}

fn describe(v: &[Violation]) -> String {
    match v {
        [] => "invalid model".into(),
        [one] => one.to_string(),
        [first, rest @ ..] => format!("{first} (and {} more)", rest.len()),
    }
}

impl ModelError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ModelError::Invalid(v) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocPort {
    dir: String,
    index: u32,
}

fn subsystem() -> String {
    "SubSystem".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocBlock {
    name: String,
    #[serde(default = "subsystem")]
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    ports: Vec<DocPort>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<DocBlock>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: BTreeMap<String, i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    archetype: Option<String>,
    #[serde(default, rename = "final", skip_serializing_if = "Option::is_none")]
    final_state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    faults: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocLine {
    src: String,
    dst: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    capacity: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    name: String,
    #[serde(default)]
    blocks: Vec<DocBlock>,
    #[serde(default)]
    lines: Vec<DocLine>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    timing: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    deadlines: BTreeMap<String, u64>,
}

fn to_block(d: DocBlock, parent: &str) -> Result<Block, ModelError> {
    let path = if parent.is_empty() { d.name.clone() } else { format!("{parent}/{}", d.name) };
    let ports = d
        .ports
        .into_iter()
        .map(|p| {
            let dir = match p.dir.to_ascii_lowercase().as_str() {
                "in" => PortDir::In,
                "out" => PortDir::Out,
                _ => return Err(ModelError::BadPortDirection { block: path.clone(), dir: p.dir }),
            };
            Ok(Port { dir, index: p.index })
        })
        .collect::<Result<_, _>>()?;
    let archetype = d
        .archetype
        .map(|a| a.parse::<Archetype>().map_err(|_| ModelError::UnknownArchetype { block: path.clone(), name: a }))
        .transpose()?;
    let children = d.children.into_iter().map(|c| to_block(c, &path)).collect::<Result<_, _>>()?;
    Ok(Block {
        name: d.name,
        kind: d.kind,
        ports,
        children,
        params: d.params,
        archetype,
        final_state: d.final_state,
        faults: d.faults,
    })
}

fn from_block(b: &Block) -> DocBlock {
    DocBlock {
        name: b.name.clone(),
        kind: b.kind.clone(),
        ports: b.ports.iter().map(|p| DocPort { dir: p.dir.to_string(), index: p.index }).collect(),
        children: b.children.iter().map(from_block).collect(),
        params: b.params.clone(),
        archetype: b.archetype.map(|a| a.name().to_owned()),
        final_state: b.final_state.clone(),
        faults: b.faults,
    }
}

fn endpoint(s: &str) -> Result<Endpoint, ModelError> {
    Endpoint::parse(s).ok_or_else(|| ModelError::BadEndpoint(s.to_owned()))
}

/// Parses a model document and validates the resulting graph.
pub fn parse_model(document: &str) -> Result<ComponentGraph, ModelError> {
    let doc: Document = serde_json::from_str(document).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let blocks = doc.blocks.into_iter().map(|b| to_block(b, "")).collect::<Result<_, _>>()?;
    let lines = doc
        .lines
        .into_iter()
        .map(|l| {
            Ok(Line {
                source: endpoint(&l.src)?,
                sinks: l.dst.iter().map(|s| endpoint(s)).collect::<Result<_, _>>()?,
                capacity: l.capacity,
                name: l.name,
            })
        })
        .collect::<Result<_, ModelError>>()?;
    let g = ComponentGraph { name: doc.name, blocks, lines, timing: doc.timing, deadlines: doc.deadlines };
    let violations = validate_graph(&g);
    if violations.is_empty() {
        Ok(g)
    } else {
        Err(ModelError::Invalid(violations))
    }
}

/// Serializes a graph back into the document format.
pub fn write_model(g: &ComponentGraph) -> String {
    let doc = Document {
        name: g.name.clone(),
        blocks: g.blocks.iter().map(from_block).collect(),
        lines: g
            .lines
            .iter()
            .map(|l| DocLine {
                src: l.source.to_string(),
                dst: l.sinks.iter().map(Endpoint::to_string).collect(),
                capacity: l.capacity,
                name: l.name.clone(),
            })
            .collect(),
        timing: g.timing.clone(),
        deadlines: g.deadlines.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("document serializes");
    s.push('\n');
    s
}
