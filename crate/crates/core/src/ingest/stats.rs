use serde::Serialize;

use crate::ir::ComponentGraph;

use super::classify::{classify, ClassificationTable, ClassifyError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelStats {
    pub total_blocks: usize,
    /// Top-level blocks are at depth 1.
    pub max_depth: usize,
    pub blocks_per_level: Vec<usize>,
    pub classified: usize,
}

pub fn model_stats(g: &ComponentGraph, table: &ClassificationTable) -> Result<ModelStats, ClassifyError> {
    let walk = g.walk();
    let mut per_level = Vec::new();
    for (path, _) in &walk {
        let d = path.depth();
        if per_level.len() < d {
            per_level.resize(d, 0);
        }
        per_level[d - 1] += 1;
    }
    Ok(ModelStats {
        total_blocks: walk.len(),
        max_depth: per_level.len(),
        blocks_per_level: per_level,
        classified: classify(g, table)?.classified.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::Block;

    #[test]
    fn single_root() {
        let g = ComponentGraph { blocks: vec![Block::new("Battery1", "SubSystem")], ..Default::default() };
        let s = model_stats(&g, &ClassificationTable::default()).unwrap();
        assert_eq!((s.total_blocks, s.max_depth, s.blocks_per_level.clone(), s.classified), (1, 1, vec![1], 1));
    }

    #[test]
    fn three_levels() {
        let root = Block::new("Root", "Group").with_children(vec![
            Block::new("A", "Group"),
            Block::new("B", "Group").with_children(vec![Block::new("B1", "Gain"), Block::new("B2", "Gain")]),
            Block::new("C", "Group"),
        ]);
        let g = ComponentGraph { blocks: vec![root], ..Default::default() };
        let s = model_stats(&g, &ClassificationTable::default()).unwrap();
        assert_eq!((s.total_blocks, s.max_depth, s.blocks_per_level), (6, 3, vec![1, 3, 2]));
        assert_eq!(s.classified, 0);
    }
}
