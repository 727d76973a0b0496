//! Hierarchical component graphs: blocks, ports, and directed lines.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use super::archetype::Archetype;

/// Slash-separated path from a top-level block down to a nested block.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockPath(pub Vec<String>);

impl BlockPath {
    pub fn parse(s: &str) -> Self {
        BlockPath(s.split('/').map(str::to_owned).collect())
    }

    pub fn child(&self, name: &str) -> Self {
        let mut v = self.0.clone();
        v.push(name.to_owned());
        BlockPath(v)
    }

    pub fn parent(&self) -> Option<BlockPath> {
        (self.0.len() > 1).then(|| BlockPath(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn leaf(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or("")
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn starts_with(&self, prefix: &BlockPath) -> bool {
        self.0.len() >= prefix.0.len() && self.0[..prefix.0.len()] == prefix.0[..]
    }
}

impl fmt::Display for BlockPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PortDir {
    In,
    Out,
}

impl fmt::Display for PortDir {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PortDir::In => "in",
            PortDir::Out => "out",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Port {
    pub dir: PortDir,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Block {
    pub name: String,
    pub kind: String,
    pub ports: Vec<Port>,
    pub children: Vec<Block>,
    /// Integer archetype parameters (e.g. `capacity`).
    pub params: BTreeMap<String, i64>,
    /// Explicit archetype; bypasses the classification table.
    pub archetype: Option<Archetype>,
    /// State the component must keep returning to (liveness).
    pub final_state: Option<String>,
    /// Per-instance switch for spontaneous fault transitions.
    pub faults: Option<bool>,
}

impl Block {
    pub fn new(name: &str, kind: &str) -> Self {
        Block { name: name.to_owned(), kind: kind.to_owned(), ..Default::default() }
    }

    pub fn with_ports(mut self, ins: u32, outs: u32) -> Self {
        self.ports.extend((1..=ins).map(|index| Port { dir: PortDir::In, index }));
        self.ports.extend((1..=outs).map(|index| Port { dir: PortDir::Out, index }));
        self
    }

    pub fn with_children(mut self, children: Vec<Block>) -> Self {
        self.children = children;
        self
    }

    pub fn with_param(mut self, name: &str, value: i64) -> Self {
        self.params.insert(name.to_owned(), value);
        self
    }

    pub fn has_port(&self, dir: PortDir, index: u32) -> bool {
        self.ports.iter().any(|p| p.dir == dir && p.index == index)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub block: BlockPath,
    pub port: u32,
}

impl Endpoint {
    pub fn parse(s: &str) -> Option<Self> {
        let (path, port) = s.rsplit_once(':')?;
        let port = port.trim().parse().ok()?;
        if path.is_empty() {
            return None;
        }
        Some(Endpoint { block: BlockPath::parse(path.trim()), port })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.block, self.port)
    }
}

/// A directed line: one source port fanning out to one or more sinks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub source: Endpoint,
    pub sinks: Vec<Endpoint>,
    /// Message capacity; makes the line a counting-semaphore channel.
    pub capacity: Option<u32>,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ComponentGraph {
    pub name: String,
    pub blocks: Vec<Block>,
    pub lines: Vec<Line>,
    /// Block path -> period, in model time units.
    pub timing: BTreeMap<String, u64>,
    /// Block path -> deadline, in model time units.
    pub deadlines: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateName { parent: String, name: String },
    InvalidName { path: String },
    DuplicatePort { block: String, dir: PortDir, index: u32 },
    InvalidPortIndex { block: String },
    EmptySinks { line: usize },
    DanglingEndpoint { line: usize, endpoint: String, reason: String },
    UnknownTimingPath { path: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateName { parent, name } => {
                write!(f, "duplicate block name `{name}` under `{parent}`")
            }
            Violation::InvalidName { path } => write!(f, "invalid block name at `{path}`"),
            Violation::DuplicatePort { block, dir, index } => {
                write!(f, "block `{block}` declares {dir} port {index} twice")
            }
            Violation::InvalidPortIndex { block } => {
                write!(f, "block `{block}` has a port index below 1")
            }
            Violation::EmptySinks { line } => write!(f, "line {line} has no sinks"),
            Violation::DanglingEndpoint { line, endpoint, reason } => {
                write!(f, "line {line} endpoint `{endpoint}`: {reason}")
            }
            Violation::UnknownTimingPath { path } => {
                write!(f, "timing entry references unknown block `{path}`")
            }
        }
    }
}

impl ComponentGraph {
    /// Looks up a block by path.
    pub fn block(&self, path: &BlockPath) -> Option<&Block> {
        let mut level = &self.blocks;
        let mut found = None;
        for name in &path.0 {
            let b = level.iter().find(|b| &b.name == name)?;
            found = Some(b);
            level = &b.children;
        }
        found
    }

    /// Pre-order walk with children sorted by name.
    pub fn walk(&self) -> Vec<(BlockPath, &Block)> {
        let mut out = Vec::new();
        fn rec<'a>(prefix: Option<&BlockPath>, blocks: &'a [Block], out: &mut Vec<(BlockPath, &'a Block)>) {
            let mut sorted: Vec<&Block> = blocks.iter().collect();
            sorted.sort_by(|a, b| a.name.cmp(&b.name));
            for b in sorted {
                let path = match prefix {
                    Some(p) => p.child(&b.name),
                    None => BlockPath(vec![b.name.clone()]),
                };
                out.push((path.clone(), b));
                rec(Some(&path), &b.children, out);
            }
        }
        rec(None, &self.blocks, &mut out);
        out
    }
}

/// Checks every structural invariant; an empty list means the graph is valid.
pub fn validate_graph(g: &ComponentGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    fn rec(parent: &str, blocks: &[Block], out: &mut Vec<Violation>) {
        let mut seen = HashSet::new();
        for b in blocks {
            let path = if parent.is_empty() { b.name.clone() } else { format!("{parent}/{}", b.name) };
            if b.name.is_empty() || b.name.contains('/') || b.name.contains(':') {
                out.push(Violation::InvalidName { path: path.clone() });
            }
            if !seen.insert(b.name.as_str()) {
                out.push(Violation::DuplicateName {
                    parent: if parent.is_empty() { "<root>".into() } else { parent.into() },
                    name: b.name.clone(),
                });
            }
            let mut ports = HashSet::new();
            for p in &b.ports {
                if p.index == 0 {
                    out.push(Violation::InvalidPortIndex { block: path.clone() });
                }
                if !ports.insert((p.dir, p.index)) {
                    out.push(Violation::DuplicatePort { block: path.clone(), dir: p.dir, index: p.index });
                }
            }
            rec(&path, &b.children, out);
        }
    }
    rec("", &g.blocks, &mut out);

    for (i, line) in g.lines.iter().enumerate() {
        if line.sinks.is_empty() {
            out.push(Violation::EmptySinks { line: i });
        }
        let ends = std::iter::once((&line.source, PortDir::Out)).chain(line.sinks.iter().map(|s| (s, PortDir::In)));
        for (ep, dir) in ends {
            let reason = match g.block(&ep.block) {
                None => Some("no such block".to_string()),
                Some(b) if !b.has_port(dir, ep.port) => Some(format!("no {dir} port {}", ep.port)),
                Some(_) => None,
            };
            if let Some(reason) = reason {
                out.push(Violation::DanglingEndpoint { line: i, endpoint: ep.to_string(), reason });
            }
        }
    }

    for path in g.timing.keys().chain(g.deadlines.keys()) {
        if g.block(&BlockPath::parse(path)).is_none() {
            out.push(Violation::UnknownTimingPath { path: path.clone() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(s: &str) -> Endpoint {
        Endpoint::parse(s).unwrap()
    }

    fn chain() -> ComponentGraph {
        ComponentGraph {
            name: "chain".into(),
            blocks: vec![
                Block::new("Battery1", "SubSystem").with_ports(0, 1),
                Block::new("Breaker1", "SubSystem").with_ports(1, 1),
                Block::new("Actuator1", "SubSystem").with_ports(1, 0),
            ],
            lines: vec![
                Line { source: ep("Battery1:1"), sinks: vec![ep("Breaker1:1")], capacity: None, name: None },
                Line { source: ep("Breaker1:1"), sinks: vec![ep("Actuator1:1")], capacity: None, name: None },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn well_formed_chain_is_valid() {
        assert_eq!(validate_graph(&chain()), vec![]);
    }

    #[test]
    fn duplicate_sibling_names_are_reported() {
        let mut g = chain();
        g.blocks.push(Block::new("Battery1", "SubSystem"));
        let v = validate_graph(&g);
        assert_eq!(v.len(), 1);
        assert!(matches!(&v[0], Violation::DuplicateName { name, .. } if name == "Battery1"));
    }

    #[test]
    fn same_name_under_different_parents_is_fine() {
        let g = ComponentGraph {
            blocks: vec![
                Block::new("A", "SubSystem").with_children(vec![Block::new("X", "Gain")]),
                Block::new("B", "SubSystem").with_children(vec![Block::new("X", "Gain")]),
            ],
            ..Default::default()
        };
        assert!(validate_graph(&g).is_empty());
    }

    #[test]
    fn missing_sink_port_is_dangling() {
        let mut g = chain();
        g.lines[1].sinks[0] = ep("Actuator1:2");
        let v = validate_graph(&g);
        assert!(matches!(&v[..], [Violation::DanglingEndpoint { line: 1, .. }]));
    }

    #[test]
    fn walk_is_sorted_preorder() {
        let g = ComponentGraph {
            blocks: vec![Block::new("Root", "SubSystem").with_children(vec![
                Block::new("b", "x").with_children(vec![Block::new("z", "x"), Block::new("y", "x")]),
                Block::new("a", "x"),
            ])],
            ..Default::default()
        };
        let names: Vec<String> = g.walk().iter().map(|(p, _)| p.to_string()).collect();
        assert_eq!(names, ["Root", "Root/a", "Root/b", "Root/b/y", "Root/b/z"]);
    }
}
