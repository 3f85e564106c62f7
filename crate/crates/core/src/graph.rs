//! Attributed graphs, graph edits, and the normalized adjacency used by the
//! GCN encoder.
//!
//! Graphs are immutable values: edits return a new graph (plus an index remap
//! when nodes are removed), so read-only sharing across rollout workers is
//! safe by construction. Edges are undirected and stored as `(min, max)`
//! pairs without self-loops; self-loops enter only inside the adjacency
//! normalization.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::GraphError;
use crate::tensor::Tensor2;

/// An observation graph: nodes, undirected edges, per-node feature rows, and
/// the actionable subsets the agent may act on.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributedGraph {
    num_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    features: Tensor2,
    actionable_nodes: BTreeSet<usize>,
    actionable_edges: BTreeSet<(usize, usize)>,
}

/// A structural or feature edit produced by an action.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphEdit {
    AddNode { features: Vec<f64> },
    RemoveNode { node: usize },
    AddEdge { u: usize, v: usize },
    RemoveEdge { u: usize, v: usize },
    SetFeatures { node: usize, features: Vec<f64> },
}

/// Result of applying an edit. `remap[old] = Some(new)` for surviving nodes;
/// identity edits carry no remap.
#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub graph: AttributedGraph,
    pub remap: Option<Vec<Option<usize>>>,
}

fn norm_edge(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

impl AttributedGraph {
    /// Validates and builds a graph. Edge pairs are normalized to `(min, max)`.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor2,
        actionable_nodes: impl IntoIterator<Item = usize>,
        actionable_edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        if features.rows() != num_nodes {
            return Err(GraphError::FeatureRowMismatch { rows: features.rows(), num_nodes });
        }
        let mut edge_set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(GraphError::SelfLoop(u, v));
            }
            for i in [u, v] {
                if i >= num_nodes {
                    return Err(GraphError::NodeOutOfRange { index: i, num_nodes });
                }
            }
            edge_set.insert(norm_edge(u, v));
        }
        let mut node_set = BTreeSet::new();
        for i in actionable_nodes {
            if i >= num_nodes {
                return Err(GraphError::NodeOutOfRange { index: i, num_nodes });
            }
            node_set.insert(i);
        }
        let mut act_edges = BTreeSet::new();
        for (u, v) in actionable_edges {
            let e = norm_edge(u, v);
            if !edge_set.contains(&e) {
                return Err(GraphError::ActionableEdgeMissing(u, v));
            }
            act_edges.insert(e);
        }
        Ok(Self {
            num_nodes,
            edges: edge_set,
            features,
            actionable_nodes: node_set,
            actionable_edges: act_edges,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&norm_edge(u, v))
    }

    /// Edges in sorted `(min, max)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Actionable node indices in ascending order.
    pub fn actionable_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.actionable_nodes.iter().copied()
    }

    pub fn actionable_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.actionable_edges.iter().copied()
    }

    pub fn num_actionable_nodes(&self) -> usize {
        self.actionable_nodes.len()
    }

    pub fn num_actionable_edges(&self) -> usize {
        self.actionable_edges.len()
    }

    pub fn is_actionable_node(&self, i: usize) -> bool {
        self.actionable_nodes.contains(&i)
    }

    /// Neighbor lists (no self-loops), index-sorted.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(u, v)| u == i || v == i).count()
    }

    /// Symmetric normalized adjacency `D^{-1/2} (A + I) D^{-1/2}` where `D`
    /// is the degree matrix of `A + I`. Rows of isolated nodes reduce to the
    /// identity row. Empty graph yields a 0x0 matrix.
    pub fn normalized_adjacency(&self) -> Tensor2 {
        let n = self.num_nodes;
        let mut out = Tensor2::zeros(n, n);
        let inv_sqrt = self.inv_sqrt_degrees();
        for i in 0..n {
            out.set(i, i, inv_sqrt[i] * inv_sqrt[i]);
        }
        for &(u, v) in &self.edges {
            let w = inv_sqrt[u] * inv_sqrt[v];
            out.set(u, v, w);
            out.set(v, u, w);
        }
        out
    }

    /// Nonzero entries `(row, col, weight)` of the normalized adjacency, for
    /// the message-passing path. Semantics match `normalized_adjacency`
    /// exactly: self-loop entries plus both orientations of each edge.
    pub fn normalized_adjacency_entries(&self) -> Vec<(usize, usize, f64)> {
        let inv_sqrt = self.inv_sqrt_degrees();
        let mut entries = Vec::with_capacity(self.num_nodes + 2 * self.edges.len());
        for i in 0..self.num_nodes {
            entries.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        }
        for &(u, v) in &self.edges {
            let w = inv_sqrt[u] * inv_sqrt[v];
            entries.push((u, v, w));
            entries.push((v, u, w));
        }
        entries
    }

    fn inv_sqrt_degrees(&self) -> Vec<f64> {
        // degree in A + I: neighbor count plus the self-loop
        let mut deg = vec![1.0_f64; self.num_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1.0;
            deg[v] += 1.0;
        }
        deg.iter().map(|d| 1.0 / d.sqrt()).collect()
    }

    /// Applies an edit atomically: either a valid new graph comes back or the
    /// edit is rejected and `self` is untouched.
    pub fn apply_edit(&self, edit: &GraphEdit) -> Result<EditOutcome, GraphError> {
        match edit {
            GraphEdit::AddNode { features } => {
                if self.num_nodes > 0 && features.len() != self.feature_dim() {
                    return Err(GraphError::FeatureDimMismatch {
                        got: features.len(),
                        want: self.feature_dim(),
                    });
                }
                let mut rows: Vec<Vec<f64>> = (0..self.num_nodes)
                    .map(|r| (0..self.feature_dim()).map(|c| self.features.get(r, c)).collect())
                    .collect();
                rows.push(features.clone());
                let graph = AttributedGraph::new(
                    self.num_nodes + 1,
                    self.edges.iter().copied(),
                    Tensor2::from_rows(&rows).map_err(|e| GraphError::EditRejected(e.to_string()))?,
                    self.actionable_nodes.iter().copied(),
                    self.actionable_edges.iter().copied(),
                )?;
                Ok(EditOutcome { graph, remap: None })
            }
            GraphEdit::RemoveNode { node } => {
                let node = *node;
                if node >= self.num_nodes {
                    return Err(GraphError::NodeOutOfRange { index: node, num_nodes: self.num_nodes });
                }
                // dense reindex: survivors keep their relative order
                let mut remap = vec![None; self.num_nodes];
                let mut next = 0;
                for (old, slot) in remap.iter_mut().enumerate() {
                    if old != node {
                        *slot = Some(next);
                        next += 1;
                    }
                }
                let rows: Vec<Vec<f64>> = (0..self.num_nodes)
                    .filter(|&r| r != node)
                    .map(|r| (0..self.feature_dim()).map(|c| self.features.get(r, c)).collect())
                    .collect();
                let map = |i: usize| remap[i];
                let edges = self
                    .edges
                    .iter()
                    .filter_map(|&(u, v)| Some((map(u)?, map(v)?)));
                let nodes = self.actionable_nodes.iter().filter_map(|&i| map(i));
                let act_edges = self
                    .actionable_edges
                    .iter()
                    .filter_map(|&(u, v)| Some((map(u)?, map(v)?)));
                let graph = AttributedGraph::new(
                    self.num_nodes - 1,
                    edges,
                    Tensor2::from_rows(&rows).map_err(|e| GraphError::EditRejected(e.to_string()))?,
                    nodes,
                    act_edges,
                )?;
                Ok(EditOutcome { graph, remap: Some(remap) })
            }
            GraphEdit::AddEdge { u, v } => {
                self.check_edge_endpoints(*u, *v)?;
                let mut next = self.clone();
                next.edges.insert(norm_edge(*u, *v)); // idempotent
                Ok(EditOutcome { graph: next, remap: None })
            }
            GraphEdit::RemoveEdge { u, v } => {
                self.check_edge_endpoints(*u, *v)?;
                let e = norm_edge(*u, *v);
                let mut next = self.clone();
                next.edges.remove(&e);
                next.actionable_edges.remove(&e);
                Ok(EditOutcome { graph: next, remap: None })
            }
            GraphEdit::SetFeatures { node, features } => {
                if *node >= self.num_nodes {
                    return Err(GraphError::NodeOutOfRange {
                        index: *node,
                        num_nodes: self.num_nodes,
                    });
                }
                if features.len() != self.feature_dim() {
                    return Err(GraphError::FeatureDimMismatch {
                        got: features.len(),
                        want: self.feature_dim(),
                    });
                }
                let mut next = self.clone();
                for (c, &x) in features.iter().enumerate() {
                    next.features.set(*node, c, x);
                }
                Ok(EditOutcome { graph: next, remap: None })
            }
        }
    }

    fn check_edge_endpoints(&self, u: usize, v: usize) -> Result<(), GraphError> {
        if u == v {
            return Err(GraphError::SelfLoop(u, v));
        }
        for i in [u, v] {
            if i >= self.num_nodes {
                return Err(GraphError::NodeOutOfRange { index: i, num_nodes: self.num_nodes });
            }
        }
        Ok(())
    }

    /// Relabels nodes by `perm`, where node `i` becomes `perm[i]`. `perm`
    /// must be a bijection over `0..num_nodes`.
    pub fn permute(&self, perm: &[usize]) -> Result<AttributedGraph, GraphError> {
        if perm.len() != self.num_nodes {
            return Err(GraphError::NotABijection);
        }
        let mut seen = vec![false; self.num_nodes];
        for &p in perm {
            if p >= self.num_nodes || seen[p] {
                return Err(GraphError::NotABijection);
            }
            seen[p] = true;
        }
        let mut features = Tensor2::zeros(self.num_nodes, self.feature_dim());
        for r in 0..self.num_nodes {
            for c in 0..self.feature_dim() {
                features.set(perm[r], c, self.features.get(r, c));
            }
        }
        AttributedGraph::new(
            self.num_nodes,
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])),
            features,
            self.actionable_nodes.iter().map(|&i| perm[i]),
            self.actionable_edges.iter().map(|&(u, v)| (perm[u], perm[v])),
        )
    }

    /// Same topology and actionable sets with a fresh feature matrix.
    pub fn with_features(&self, features: Tensor2) -> Result<AttributedGraph, GraphError> {
        if features.rows() != self.num_nodes {
            return Err(GraphError::FeatureRowMismatch {
                rows: features.rows(),
                num_nodes: self.num_nodes,
            });
        }
        let mut next = self.clone();
        next.features = features;
        Ok(next)
    }

    /// True if every node is reachable from node 0 (vacuously true for n<=1).
    pub fn is_connected(&self) -> bool {
        if self.num_nodes <= 1 {
            return true;
        }
        let adj = self.adjacency_lists();
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.num_nodes
    }
}

/// Serialization shape for the on-disk graph format. Numeric round-trip is
/// exact: features serialize as f64 and serde_json prints shortest
/// round-trippable decimals.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    features: Vec<Vec<f64>>,
    actionable_nodes: Vec<usize>,
    actionable_edges: Vec<[usize; 2]>,
}

impl AttributedGraph {
    pub fn to_json(&self) -> String {
        let file = GraphFile {
            num_nodes: self.num_nodes,
            edges: self.edges.iter().map(|&(u, v)| [u, v]).collect(),
            features: (0..self.num_nodes)
                .map(|r| (0..self.feature_dim()).map(|c| self.features.get(r, c)).collect())
                .collect(),
            actionable_nodes: self.actionable_nodes.iter().copied().collect(),
            actionable_edges: self.actionable_edges.iter().map(|&(u, v)| [u, v]).collect(),
        };
        serde_json::to_string_pretty(&file).expect("graph serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, GraphError> {
        let file: GraphFile =
            serde_json::from_str(s).map_err(|e| GraphError::EditRejected(format!("parse: {e}")))?;
        let features = if file.num_nodes == 0 {
            Tensor2::zeros(0, 0)
        } else {
            Tensor2::from_rows(&file.features)
                .map_err(|e| GraphError::EditRejected(format!("features: {e}")))?
        };
        AttributedGraph::new(
            file.num_nodes,
            file.edges.iter().map(|e| (e[0], e[1])),
            features,
            file.actionable_nodes,
            file.actionable_edges.iter().map(|e| (e[0], e[1])),
        )
    }
}
