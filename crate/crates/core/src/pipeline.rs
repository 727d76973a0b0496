//! Model document to composite machine: classify, resolve, instantiate, compose.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::archetype::{instantiate, ArchetypeError, Instance};
use crate::composer::{compose, Channel, ComposeError, CompositeMachine, Connection};
use crate::config::Config;
use crate::ingest::{
    classify, model_stats, parse_model, resolve_connections, Classification, ClassifyError, ConnectionReport,
    ModelError, ModelStats,
};
use crate::ir::{BlockPath, ChoiceKind, ComponentGraph, Value};
use crate::smv::is_keyword;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Archetype(#[from] ArchetypeError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error("block `{block}`: final state `{state}` is not in its domain")]
    BadFinalState { block: String, state: String },
}

/// A loaded model and every intermediate product.
#[derive(Debug, Clone)]
pub struct Model {
    pub graph: ComponentGraph,
    pub classification: Classification,
    pub report: ConnectionReport,
    /// Block path -> instance name.
    pub names: BTreeMap<BlockPath, String>,
    pub machine: CompositeMachine,
}

impl Model {
    pub fn stats(&self, cfg: &Config) -> Result<ModelStats, ClassifyError> {
        model_stats(&self.graph, &cfg.table())
    }
}

/// Turns any text into a NuSMV identifier.
pub fn sanitize(s: &str) -> String {
    let mut out: String = s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    if is_keyword(&out) {
        out.push('_');
    }
    out
}

/// Leaf names where unique among classified blocks, otherwise the full path.
pub fn instance_names(c: &Classification) -> BTreeMap<BlockPath, String> {
    let mut leaf_count: HashMap<&str, usize> = HashMap::new();
    for (p, _) in &c.classified {
        *leaf_count.entry(p.leaf()).or_default() += 1;
    }
    c.classified
        .iter()
        .map(|(p, _)| {
            let name = if leaf_count[p.leaf()] == 1 { sanitize(p.leaf()) } else { sanitize(&p.0.join("_")) };
            (p.clone(), name)
        })
        .collect()
}

pub fn load_file(path: &Path, cfg: &Config) -> Result<Model, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| PipelineError::Io { path: path.display().to_string(), source })?;
    load_str(&text, cfg)
}

pub fn load_str(text: &str, cfg: &Config) -> Result<Model, PipelineError> {
    build(parse_model(text)?, cfg)
}

pub fn build(graph: ComponentGraph, cfg: &Config) -> Result<Model, PipelineError> {
    let classification = classify(&graph, &cfg.table())?;
    let report = resolve_connections(&graph, &classification);
    let names = instance_names(&classification);

    let mut instances = Vec::new();
    for (path, tag) in &classification.classified {
        let block = graph.block(path).expect("classified blocks exist");
        let mut params = cfg.defaults_for(*tag);
        params.extend(block.params.clone());
        let mut inst = instantiate(*tag, &names[path], &params)?;
        let key = path.to_string();
        inst.period = graph.timing.get(&key).copied();
        inst.deadline = graph.deadlines.get(&key).copied();
        inst.origin = Some(key.clone());
        if let Some(f) = &block.final_state {
            let v = Value::parse(f);
            if !inst.spec.domain.contains(v) {
                return Err(PipelineError::BadFinalState { block: key, state: f.clone() });
            }
            inst.final_state = Some(v);
        }
        if block.faults == Some(false) {
            inst.spec = inst.spec.without(ChoiceKind::Fault);
        }
        instances.push(inst);
    }
    let connections = report
        .connections
        .iter()
        .map(|c| Connection { source: names[&c.source].clone(), sink: names[&c.sink].clone(), kind: c.kind })
        .collect();
    let channels = report
        .channels
        .iter()
        .map(|c| Channel {
            name: sanitize(&c.name),
            producer: names[&c.producer].clone(),
            consumer: names[&c.consumer].clone(),
            capacity: c.capacity,
        })
        .collect();
    let machine = compose(instances, connections, channels)?;
    Ok(Model { graph, classification, report, names, machine })
}

/// Replaces instances' initial states, e.g. `Battery1=dead`.
pub fn with_initial(m: &CompositeMachine, starts: &BTreeMap<String, String>) -> Result<CompositeMachine, ComposeError> {
    let mut instances: Vec<Instance> = m.instances.clone();
    for (name, state) in starts {
        let i = m.instance_index(name).ok_or_else(|| ComposeError::UnknownInstance(name.clone()))?;
        instances[i].spec.initial = vec![Value::parse(state)];
    }
    m.with_instances(instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sanitizing() {
        assert_eq!(sanitize("Relay EY244"), "Relay_EY244");
        assert_eq!(sanitize("3phase"), "_3phase");
        assert_eq!(sanitize("next"), "next_");
        assert_eq!(sanitize("Battery1"), "Battery1");
    }

    #[test]
    fn builds_a_small_model() {
        let doc = r#"{"name": "m", "blocks": [
            {"name": "Battery1", "params": {"capacity": 4}, "ports": [{"dir": "out", "index": 1}]},
            {"name": "Fan1", "ports": [{"dir": "in", "index": 1}], "final": "nominal"}],
          "lines": [{"src": "Battery1:1", "dst": ["Fan1:1"]}],
          "timing": {"Fan1": 100}}"#;
        let model = load_str(doc, &Config::default()).unwrap();
        let m = &model.machine;
        assert_eq!(m.instances.len(), 2);
        assert_eq!(m.downstream[m.instance_index("Battery1").unwrap()].len(), 1);
        assert!(m.clock.is_some());
        let fan = &m.instances[m.instance_index("Fan1").unwrap()];
        assert_eq!(fan.final_state, Some(Value::sym("nominal")));
        assert_eq!(fan.origin.as_deref(), Some("Fan1"));
    }

    #[test]
    fn duplicate_leaves_use_paths() {
        let doc = r#"{"name": "m", "blocks": [
            {"name": "A", "kind": "Group", "children": [{"name": "Fan1"}]},
            {"name": "B", "kind": "Group", "children": [{"name": "Fan1"}]}]}"#;
        let model = load_str(doc, &Config::default()).unwrap();
        let names: Vec<&str> = model.machine.instances.iter().map(|i| i.name.as_str()).collect();
        assert_eq!(names, vec!["A_Fan1", "B_Fan1"]);
    }

    #[test]
    fn missing_parameters_and_bad_final_state() {
        let doc = r#"{"name": "m", "blocks": [{"name": "Battery1"}]}"#;
        assert!(matches!(load_str(doc, &Config::default()), Err(PipelineError::Archetype(_))));
        let cfg = Config::parse(r#"{"defaults": {"Battery": {"capacity": 3}}}"#, "t").unwrap();
        assert!(load_str(doc, &cfg).is_ok());
        let bad = r#"{"name": "m", "blocks": [{"name": "Fan1", "final": "flying"}]}"#;
        assert!(matches!(load_str(bad, &cfg), Err(PipelineError::BadFinalState { .. })));
    }
}
