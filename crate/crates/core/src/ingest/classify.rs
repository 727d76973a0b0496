//! Name-based archetype classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{Archetype, BlockPath, ComponentGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    /// Case-insensitive substring anywhere in the block name.
    Contains(String),
    /// Case-insensitive prefix of the block name.
    Prefix(String),
}

impl Pattern {
    pub fn matches(&self, name: &str) -> bool {
        let name = name.to_ascii_lowercase();
        match self {
            Pattern::Contains(p) => name.contains(&p.to_ascii_lowercase()),
            Pattern::Prefix(p) => name.starts_with(&p.to_ascii_lowercase()),
        }
    }

    fn text(&self) -> &str {
        match self {
            Pattern::Contains(p) | Pattern::Prefix(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(flatten)]
    pub pattern: Pattern,
    /// Required block kind; `None` accepts any kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub archetype: Archetype,
    /// Rows sharing a group are mutually exclusive: if two of them match a
    /// name with equally long patterns and disagree, the name is ambiguous.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl TableRow {
    pub fn contains(pattern: &str, archetype: Archetype) -> Self {
        TableRow { pattern: Pattern::Contains(pattern.into()), kind: Some("SubSystem".into()), archetype, group: None }
    }

    pub fn prefix(pattern: &str, archetype: Archetype) -> Self {
        TableRow { pattern: Pattern::Prefix(pattern.into()), ..TableRow::contains("", archetype) }
    }

    pub fn in_group(mut self, group: &str) -> Self {
        self.group = Some(group.into());
        self
    }

    fn matches(&self, name: &str, kind: &str) -> bool {
        self.kind.as_deref().is_none_or(|k| k.eq_ignore_ascii_case(kind)) && self.pattern.matches(name)
    }
}

/// Ordered, first-match-wins classification rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassificationTable {
    pub rows: Vec<TableRow>,
}

impl Default for ClassificationTable {
    fn default() -> Self {
        use Archetype::*;
        ClassificationTable {
            rows: vec![
                TableRow::contains("battery", Battery),
                TableRow::contains("circuitbreaker", CircuitBreaker),
                TableRow::contains("breaker", CircuitBreaker),
                TableRow::contains("relay", Relay),
                TableRow::contains(" ey", Relay),
                TableRow::contains("inverter", Inverter),
                TableRow::contains("load bank", MergedLoadBank),
                TableRow::contains("loadbank", MergedLoadBank),
                TableRow::contains("load", Load),
                TableRow::contains("sensor", Sensor),
                TableRow::prefix("e1", Sensor),
                TableRow::prefix("it", Sensor),
                TableRow::prefix("st", Sensor),
                TableRow::contains("fan", Actuator),
                TableRow::contains("pump", Actuator),
                TableRow::contains("light", Actuator),
                TableRow::contains("actuator", Actuator),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("block `{block}` matches conflicting rows `{first}` ({a}) and `{second}` ({b})")]
    AmbiguousMatch { block: String, first: String, a: Archetype, second: String, b: Archetype },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Classification {
    /// Classified blocks in depth-first order.
    pub classified: Vec<(BlockPath, Archetype)>,
    /// Blocks no row applies to (outside any classified block).
    pub unmatched: Vec<BlockPath>,
}

impl Classification {
    pub fn archetype_of(&self, path: &BlockPath) -> Option<Archetype> {
        self.classified.iter().find(|(p, _)| p == path).map(|(_, a)| *a)
    }

    /// The classified block at `path` or the nearest classified ancestor.
    pub fn owner(&self, path: &BlockPath) -> Option<&BlockPath> {
        self.classified.iter().map(|(p, _)| p).filter(|p| path.starts_with(p)).max_by_key(|p| p.depth())
    }
}

impl ClassificationTable {
    /// Classifies a single block name, honoring first-match-wins and group conflicts.
    pub fn lookup(&self, path: &BlockPath, kind: &str) -> Result<Option<Archetype>, ClassifyError> {
        let name = path.leaf();
        let Some((i, first)) = self.rows.iter().enumerate().find(|(_, r)| r.matches(name, kind)) else {
            return Ok(None);
        };
        if let Some(group) = &first.group {
            let rival = self.rows[i + 1..].iter().find(|r| {
                r.group.as_ref() == Some(group)
                    && r.archetype != first.archetype
                    && r.pattern.text().len() == first.pattern.text().len()
                    && r.matches(name, kind)
            });
            if let Some(r) = rival {
                return Err(ClassifyError::AmbiguousMatch {
                    block: path.to_string(),
                    first: first.pattern.text().to_owned(),
                    a: first.archetype,
                    second: r.pattern.text().to_owned(),
                    b: r.archetype,
                });
            }
        }
        Ok(Some(first.archetype))
    }
}

/// Depth-first classification. Classified blocks are black boxes: their
/// children are not classified on their own.
pub fn classify(g: &ComponentGraph, table: &ClassificationTable) -> Result<Classification, ClassifyError> {
    let mut out = Classification::default();
    for (path, block) in g.walk() {
        if out.owner(&path).is_some() {
            continue;
        }
        let found = match block.archetype {
            Some(a) => Some(a),
            None => table.lookup(&path, &block.kind)?,
        };
        match found {
            Some(a) => out.classified.push((path, a)),
            None => out.unmatched.push(path),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Block;

    fn graph(blocks: Vec<Block>) -> ComponentGraph {
        ComponentGraph { name: "t".into(), blocks, ..Default::default() }
    }

    fn one(name: &str, kind: &str) -> Option<Archetype> {
        ClassificationTable::default().lookup(&BlockPath::parse(name), kind).unwrap()
    }

    #[test]
    fn default_rows() {
        assert_eq!(one("Battery1", "SubSystem"), Some(Archetype::Battery));
        assert_eq!(one("CircuitBreakerEY162", "SubSystem"), Some(Archetype::CircuitBreaker));
        assert_eq!(one("ScopeDisplay3", "Scope"), None);
        assert_eq!(one("Relay EY244", "SubSystem"), Some(Archetype::Relay));
        assert_eq!(one("LoadBank2", "SubSystem"), Some(Archetype::MergedLoadBank));
        assert_eq!(one("DCLoadBox", "SubSystem"), Some(Archetype::Load));
        assert_eq!(one("E140", "SubSystem"), Some(Archetype::Sensor));
        assert_eq!(one("Fan416", "SubSystem"), Some(Archetype::Actuator));
        assert_eq!(one("Battery1", "Constant"), None);
    }

    #[test]
    fn first_match_wins() {
        let table = ClassificationTable {
            rows: vec![TableRow::contains("fan", Archetype::Load), TableRow::contains("fan", Archetype::Actuator)],
        };
        assert_eq!(table.lookup(&BlockPath::parse("Fan1"), "SubSystem").unwrap(), Some(Archetype::Load));
    }

    #[test]
    fn conflicting_group_is_ambiguous() {
        let table = ClassificationTable {
            rows: vec![
                TableRow::contains("fan", Archetype::Load).in_group("g"),
                TableRow::contains("pan", Archetype::Actuator).in_group("g"),
            ],
        };
        let e = table.lookup(&BlockPath::parse("FanPan"), "SubSystem").unwrap_err();
        assert!(matches!(e, ClassifyError::AmbiguousMatch { .. }));
        assert!(table.lookup(&BlockPath::parse("Fan"), "SubSystem").is_ok());
    }

    #[test]
    fn classified_blocks_are_black_boxes() {
        let g =
            graph(vec![Block::new("Battery1", "SubSystem").with_children(vec![Block::new("FanInside", "SubSystem")])]);
        let c = classify(&g, &ClassificationTable::default()).unwrap();
        assert_eq!(c.classified, vec![(BlockPath::parse("Battery1"), Archetype::Battery)]);
        assert!(c.unmatched.is_empty());
    }

    #[test]
    fn explicit_archetype_overrides_table() {
        let mut b = Block::new("NEMO", "SubSystem");
        b.archetype = Some(Archetype::Actuator);
        let c = classify(&graph(vec![b, Block::new("Scope", "Scope")]), &ClassificationTable::default()).unwrap();
        assert_eq!(c.classified.len(), 1);
        assert_eq!(c.unmatched, vec![BlockPath::parse("Scope")]);
    }

    #[test]
    fn table_round_trips_through_json() {
        let t = ClassificationTable::default();
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains(r#"{"contains":"battery","kind":"SubSystem","archetype":"Battery"}"#));
        assert_eq!(serde_json::from_str::<ClassificationTable>(&text).unwrap(), t);
    }
}
