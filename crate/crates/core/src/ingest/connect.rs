//! Follows lines from classified blocks through unclassified intermediate
//! blocks until another classified block is reached.

use std::collections::{BTreeSet, HashSet};

use crate::ir::{Archetype, BlockPath, ComponentGraph};

use super::classify::Classification;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConnectionKind {
    /// Electrical supply and draw.
    Power,
    /// A sensor observing the supply it sits on.
    Observation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockConnection {
    pub source: BlockPath,
    pub sink: BlockPath,
    pub kind: ConnectionKind,
}

/// A capacity-annotated line, treated as a counting semaphore.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockChannel {
    pub name: String,
    pub producer: BlockPath,
    pub consumer: BlockPath,
    pub capacity: u32,
}

/// A line path that ended without reaching a classified block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpenEndpoint {
    pub source: BlockPath,
    pub dead_end: BlockPath,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConnectionReport {
    pub connections: Vec<BlockConnection>,
    pub channels: Vec<BlockChannel>,
    pub open: Vec<OpenEndpoint>,
}

struct Walker<'a> {
    g: &'a ComponentGraph,
    c: &'a Classification,
    found: BTreeSet<BlockConnection>,
    open: BTreeSet<OpenEndpoint>,
}

impl Walker<'_> {
    /// Sinks of every non-channel line leaving `from` or one of its descendants.
    fn sinks_from(&self, from: &BlockPath) -> Vec<BlockPath> {
        self.g
            .lines
            .iter()
            .filter(|l| l.capacity.is_none() && l.source.block.starts_with(from))
            .flat_map(|l| l.sinks.iter().map(|s| s.block.clone()))
            .filter(|s| !s.starts_with(from))
            .collect()
    }

    fn follow(&mut self, origin: &BlockPath, at: &BlockPath, seen: &mut HashSet<BlockPath>) {
        for sink in self.sinks_from(at) {
            self.visit(origin, sink, seen);
        }
    }

    fn visit(&mut self, origin: &BlockPath, sink: BlockPath, seen: &mut HashSet<BlockPath>) {
        if !seen.insert(sink.clone()) {
            return;
        }
        if let Some(owner) = self.c.owner(&sink).cloned() {
            if &owner == origin {
                return;
            }
            let sensor = self.c.archetype_of(&owner) == Some(Archetype::Sensor);
            self.found.insert(BlockConnection {
                source: origin.clone(),
                sink: owner.clone(),
                kind: if sensor { ConnectionKind::Observation } else { ConnectionKind::Power },
            });
            if sensor {
                // sensors observe without interrupting the supply path
                self.follow(origin, &owner, seen);
            }
            return;
        }
        let mut next = self.sinks_from(&sink);
        // leaving a subsystem through one of its outport blocks
        if let Some(block) = self.g.block(&sink) {
            if block.kind.eq_ignore_ascii_case("Outport") {
                if let Some(parent) = sink.parent() {
                    next.extend(self.sinks_from(&parent));
                }
            }
        }
        if next.is_empty() {
            self.open.insert(OpenEndpoint { source: origin.clone(), dead_end: sink });
            return;
        }
        for n in next {
            self.visit(origin, n, seen);
        }
    }
}

/// Resolves block-level connections between classified blocks.
pub fn resolve_connections(g: &ComponentGraph, c: &Classification) -> ConnectionReport {
    let mut w = Walker { g, c, found: BTreeSet::new(), open: BTreeSet::new() };
    for (path, tag) in &c.classified {
        if *tag == Archetype::Sensor {
            continue;
        }
        let mut seen = HashSet::new();
        w.follow(path, path, &mut seen);
    }
    let mut channels = Vec::new();
    for (i, line) in g.lines.iter().enumerate() {
        let Some(capacity) = line.capacity else { continue };
        let producer = c.owner(&line.source.block).cloned();
        let consumer = line.sinks.first().and_then(|s| c.owner(&s.block)).cloned();
        match (producer, consumer) {
            (Some(producer), Some(consumer)) => channels.push(BlockChannel {
                name: line.name.clone().unwrap_or_else(|| format!("channel{}", i + 1)),
                producer,
                consumer,
                capacity,
            }),
            (producer, _) => {
                w.open.insert(OpenEndpoint {
                    source: producer.unwrap_or_else(|| line.source.block.clone()),
                    dead_end: line.sinks.first().map(|s| s.block.clone()).unwrap_or_default(),
                });
            }
        }
    }
    ConnectionReport { connections: w.found.into_iter().collect(), channels, open: w.open.into_iter().collect() }
}
