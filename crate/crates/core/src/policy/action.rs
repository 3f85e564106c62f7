//! Action spaces, concrete action selections, and the flat slot layout that
//! ties them to policy logits.

use serde::{Deserialize, Serialize};

use crate::graph::AttributedGraph;

/// Named node-level and edge-level action types. The total action space of
/// an observation is the cross product with its actionable nodes and edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub node_actions: Vec<String>,
    pub edge_actions: Vec<String>,
}

impl ActionSpace {
    pub fn nodes_only(node_actions: &[&str]) -> Self {
        Self {
            node_actions: node_actions.iter().map(|s| s.to_string()).collect(),
            edge_actions: Vec::new(),
        }
    }

    pub fn new(node_actions: &[&str], edge_actions: &[&str]) -> Self {
        Self {
            node_actions: node_actions.iter().map(|s| s.to_string()).collect(),
            edge_actions: edge_actions.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn is_valid(&self) -> bool {
        let mut ids: Vec<&String> = self.node_actions.iter().chain(&self.edge_actions).collect();
        if ids.is_empty() {
            return false;
        }
        ids.sort();
        ids.windows(2).all(|w| w[0] != w[1])
    }
}

/// One selected action: a node action aimed at a node, or an edge action
/// aimed at an actionable edge. Indices refer to the observed graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionInstance {
    Node { action: usize, node: usize },
    Edge { action: usize, src: usize, dst: usize },
}

/// Flat slot layout for one observation: `|V_a| * |A_V|` node-action slots
/// (node-major, matching the flattened per-node logit matrix) followed by
/// `|E_a| * |A_E|` edge-action slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionLayout {
    nodes: Vec<usize>,
    edges: Vec<(usize, usize)>,
    n_node_actions: usize,
    n_edge_actions: usize,
}

impl ActionLayout {
    pub fn of(graph: &AttributedGraph, space: &ActionSpace) -> Self {
        Self {
            nodes: graph.actionable_nodes().collect(),
            edges: graph.actionable_edges().collect(),
            n_node_actions: space.node_actions.len(),
            n_edge_actions: space.edge_actions.len(),
        }
    }

    pub fn actionable_nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn actionable_edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_slot_count(&self) -> usize {
        self.nodes.len() * self.n_node_actions
    }

    pub fn slot_count(&self) -> usize {
        self.node_slot_count() + self.edges.len() * self.n_edge_actions
    }

    pub fn instance(&self, slot: usize) -> Option<ActionInstance> {
        let node_slots = self.node_slot_count();
        if slot < node_slots {
            let pos = slot / self.n_node_actions;
            let action = slot % self.n_node_actions;
            Some(ActionInstance::Node { action, node: self.nodes[pos] })
        } else {
            let rel = slot - node_slots;
            if self.n_edge_actions == 0 || rel >= self.edges.len() * self.n_edge_actions {
                return None;
            }
            let pos = rel / self.n_edge_actions;
            let action = rel % self.n_edge_actions;
            let (src, dst) = self.edges[pos];
            Some(ActionInstance::Edge { action, src, dst })
        }
    }

    pub fn slot(&self, a: &ActionInstance) -> Option<usize> {
        match a {
            ActionInstance::Node { action, node } => {
                if *action >= self.n_node_actions {
                    return None;
                }
                let pos = self.nodes.iter().position(|n| n == node)?;
                Some(pos * self.n_node_actions + action)
            }
            ActionInstance::Edge { action, src, dst } => {
                if *action >= self.n_edge_actions {
                    return None;
                }
                let key = if src < dst { (*src, *dst) } else { (*dst, *src) };
                let pos = self.edges.iter().position(|e| *e == key)?;
                Some(self.node_slot_count() + pos * self.n_edge_actions + action)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor2;

    fn graph_with_edge_actions() -> AttributedGraph {
        AttributedGraph::new(
            4,
            [(0, 1), (1, 2), (2, 3)],
            Tensor2::zeros(4, 2),
            [0, 2, 3],
            [(1, 2), (0, 1)],
        )
        .unwrap()
    }

    #[test]
    fn action_space_validity() {
        assert!(ActionSpace::nodes_only(&["restore", "upgrade"]).is_valid());
        assert!(!ActionSpace::nodes_only(&[]).is_valid());
        assert!(!ActionSpace::new(&["a", "a"], &[]).is_valid());
        assert!(!ActionSpace::new(&["a"], &["a"]).is_valid());
        assert!(ActionSpace::new(&[], &["block"]).is_valid());
    }

    #[test]
    fn slot_roundtrip_covers_nodes_and_edges() {
        let g = graph_with_edge_actions();
        let space = ActionSpace::new(&["restore", "upgrade"], &["block"]);
        let layout = ActionLayout::of(&g, &space);
        assert_eq!(layout.slot_count(), 3 * 2 + 2 * 1);
        for s in 0..layout.slot_count() {
            let inst = layout.instance(s).unwrap();
            assert_eq!(layout.slot(&inst), Some(s), "slot {s} -> {inst:?}");
        }
        assert!(layout.instance(layout.slot_count()).is_none());
    }

    #[test]
    fn node_major_ordering() {
        let g = graph_with_edge_actions();
        let space = ActionSpace::new(&["restore", "upgrade"], &["block"]);
        let layout = ActionLayout::of(&g, &space);
        // actionable nodes sorted: [0, 2, 3]; slot 3 = node 2, action 1
        assert_eq!(layout.instance(3), Some(ActionInstance::Node { action: 1, node: 2 }));
        // edge slots follow, edges sorted: [(0,1), (1,2)]
        assert_eq!(
            layout.instance(6),
            Some(ActionInstance::Edge { action: 0, src: 0, dst: 1 })
        );
    }

    #[test]
    fn edge_slot_is_orientation_free() {
        let g = graph_with_edge_actions();
        let space = ActionSpace::new(&["restore"], &["block"]);
        let layout = ActionLayout::of(&g, &space);
        let a = layout.slot(&ActionInstance::Edge { action: 0, src: 1, dst: 2 });
        let b = layout.slot(&ActionInstance::Edge { action: 0, src: 2, dst: 1 });
        assert_eq!(a, b);
        assert!(a.is_some());
    }
}
