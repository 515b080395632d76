//! Dependency graph describing how a service is wired together.
//!
//! Nodes are package functions; an edge feeds a producer's output into one
//! input position of a consumer. The graph stays acyclic and every input
//! position has at most one producer. Positions with no producer are the
//! service's own inputs.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DepNode {
    pub function_name: String,
    /// Textual version reference of the package providing the function.
    pub package_id: String,
    pub arity: usize,
}

impl DepNode {
    pub fn new(function_name: impl Into<String>, package_id: impl Into<String>, arity: usize) -> Self {
        Self {
            function_name: function_name.into(),
            package_id: package_id.into(),
            arity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub producer: NodeId,
    pub consumer: NodeId,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("input position {position} out of range for node {node} (arity {arity})")]
    PositionOutOfRange {
        node: NodeId,
        position: usize,
        arity: usize,
    },
    #[error("input {position} of node {node} is already fed")]
    AlreadyFed { node: NodeId, position: usize },
    #[error("edge {producer} -> {consumer} would create a cycle")]
    Cycle { producer: NodeId, consumer: NodeId },
    #[error("graph must have exactly one sink, found {0}")]
    SinkCount(usize),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct DependencyGraph {
    nodes: Vec<DepNode>,
    edges: Vec<Edge>,
}

#[derive(Deserialize)]
struct RawGraph {
    nodes: Vec<DepNode>,
    edges: Vec<Edge>,
}

impl TryFrom<RawGraph> for DependencyGraph {
    type Error = GraphError;

    fn try_from(raw: RawGraph) -> Result<Self, GraphError> {
        let mut g = DependencyGraph {
            nodes: raw.nodes,
            edges: Vec::with_capacity(raw.edges.len()),
        };
        for e in raw.edges {
            g.add_edge(e.producer, e.consumer, e.position)?;
        }
        if !g.nodes.is_empty() {
            g.sink()?;
        }
        Ok(g)
    }
}

impl DependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(node: DepNode) -> Self {
        Self {
            nodes: vec![node],
            edges: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[DepNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> Option<&DepNode> {
        self.nodes.get(id)
    }

    pub fn add_node(&mut self, node: DepNode) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, producer: NodeId, consumer: NodeId, position: usize) -> Result<(), GraphError> {
        if producer >= self.nodes.len() {
            return Err(GraphError::UnknownNode(producer));
        }
        let arity = self.nodes.get(consumer).ok_or(GraphError::UnknownNode(consumer))?.arity;
        if position >= arity {
            return Err(GraphError::PositionOutOfRange {
                node: consumer,
                position,
                arity,
            });
        }
        if self.producer_of(consumer, position).is_some() {
            return Err(GraphError::AlreadyFed {
                node: consumer,
                position,
            });
        }
        if producer == consumer || self.reaches(consumer, producer) {
            return Err(GraphError::Cycle { producer, consumer });
        }
        self.edges.push(Edge {
            producer,
            consumer,
            position,
        });
        Ok(())
    }

    pub fn producer_of(&self, consumer: NodeId, position: usize) -> Option<NodeId> {
        self.edges
            .iter()
            .find(|e| e.consumer == consumer && e.position == position)
            .map(|e| e.producer)
    }

    fn reaches(&self, from: NodeId, to: NodeId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                stack.extend(self.edges.iter().filter(|e| e.producer == n).map(|e| e.consumer));
            }
        }
        false
    }

    pub fn sinks(&self) -> Vec<NodeId> {
        let producers: BTreeSet<NodeId> = self.edges.iter().map(|e| e.producer).collect();
        (0..self.nodes.len()).filter(|n| !producers.contains(n)).collect()
    }

    pub fn sink(&self) -> Result<NodeId, GraphError> {
        match self.sinks().as_slice() {
            [one] => Ok(*one),
            other => Err(GraphError::SinkCount(other.len())),
        }
    }

    /// Input positions without a producer, ordered by (node id, position).
    ///
    /// Nodes are numbered in composition order, so this ordering is the
    /// left-to-right concatenation of the composed services' inputs.
    pub fn unfed_inputs(&self) -> Vec<(NodeId, usize)> {
        let fed: BTreeSet<(NodeId, usize)> = self.edges.iter().map(|e| (e.consumer, e.position)).collect();
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(id, n)| (0..n.arity).map(move |p| (id, p)))
            .filter(|slot| !fed.contains(slot))
            .collect()
    }

    /// Kahn's algorithm, smallest ready id first.
    pub fn topo_order(&self) -> Vec<NodeId> {
        let mut indegree = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            indegree[e.consumer] += 1;
        }
        let mut ready: BTreeSet<NodeId> = (0..self.nodes.len()).filter(|&n| indegree[n] == 0).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for e in self.edges.iter().filter(|e| e.producer == n) {
                indegree[e.consumer] -= 1;
                if indegree[e.consumer] == 0 {
                    ready.insert(e.consumer);
                }
            }
        }
        order
    }

    /// Appends `other` as a disjoint subgraph and returns the id offset
    /// applied to its nodes.
    pub fn append(&mut self, other: &DependencyGraph) -> NodeId {
        let offset = self.nodes.len();
        self.nodes.extend(other.nodes.iter().cloned());
        self.edges.extend(other.edges.iter().map(|e| Edge {
            producer: e.producer + offset,
            consumer: e.consumer + offset,
            position: e.position,
        }));
        offset
    }

    /// A labelling-independent rendering of the graph unrolled from its
    /// sink. Two single-sink graphs with equal canonical forms and equal
    /// node and edge counts are isomorphic.
    pub fn canonical_form(&self) -> String {
        let mut memo = HashMap::new();
        let body = match self.sink() {
            Ok(s) => self.canonical_node(s, &mut memo),
            Err(_) => String::from("<no single sink>"),
        };
        format!("{}n{}e:{body}", self.nodes.len(), self.edges.len())
    }

    fn canonical_node(&self, id: NodeId, memo: &mut HashMap<NodeId, String>) -> String {
        if let Some(s) = memo.get(&id) {
            return s.clone();
        }
        let n = &self.nodes[id];
        let mut s = format!("{}@{}(", n.function_name, n.package_id);
        for p in 0..n.arity {
            if p > 0 {
                s.push(',');
            }
            match self.producer_of(id, p) {
                Some(src) => {
                    let child = self.canonical_node(src, memo);
                    s.push_str(&child);
                }
                None => s.push('_'),
            }
        }
        s.push(')');
        memo.insert(id, s.clone());
        s
    }

    /// Graphviz rendering, handy for debugging compositions.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph service {\n");
        for (id, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "  n{id} [label=\"{}\\n{}\"];", n.function_name, n.package_id);
        }
        for e in &self.edges {
            let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", e.producer, e.consumer, e.position);
        }
        out.push('}');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, arity: usize) -> DepNode {
        DepNode::new(name, "pkg/v1", arity)
    }

    #[test]
    fn rejects_cycles_and_double_feeds() {
        let mut g = DependencyGraph::new();
        let a = g.add_node(node("a", 1));
        let b = g.add_node(node("b", 2));
        g.add_edge(a, b, 0).unwrap();
        assert_eq!(
            g.add_edge(b, a, 0),
            Err(GraphError::Cycle {
                producer: b,
                consumer: a
            })
        );
        assert_eq!(
            g.add_edge(a, a, 0),
            Err(GraphError::Cycle {
                producer: a,
                consumer: a
            })
        );
        assert_eq!(
            g.add_edge(a, b, 0),
            Err(GraphError::AlreadyFed { node: b, position: 0 })
        );
        assert!(matches!(
            g.add_edge(a, b, 2),
            Err(GraphError::PositionOutOfRange { .. })
        ));
        assert_eq!(g.add_edge(a, 7, 0), Err(GraphError::UnknownNode(7)));
        assert_eq!(g.edges().len(), 1);
    }

    #[test]
    fn unfed_inputs_follow_node_then_position() {
        let mut g = DependencyGraph::new();
        let a = g.add_node(node("a", 2));
        let b = g.add_node(node("b", 1));
        let c = g.add_node(node("c", 2));
        g.add_edge(a, c, 1).unwrap();
        g.add_edge(b, c, 0).unwrap();
        assert_eq!(g.unfed_inputs(), vec![(a, 0), (a, 1), (b, 0)]);
        assert_eq!(g.sink(), Ok(c));
        assert_eq!(g.topo_order(), vec![a, b, c]);
    }

    #[test]
    fn fan_out_is_allowed_but_needs_single_sink() {
        let mut g = DependencyGraph::new();
        let a = g.add_node(node("a", 0));
        let b = g.add_node(node("b", 1));
        let c = g.add_node(node("c", 1));
        g.add_edge(a, b, 0).unwrap();
        g.add_edge(a, c, 0).unwrap();
        assert_eq!(g.sink(), Err(GraphError::SinkCount(2)));
    }

    #[test]
    fn deserialization_validates() {
        let bad = r#"{"nodes":[{"function_name":"a","package_id":"p","arity":1}],
                      "edges":[{"producer":0,"consumer":0,"position":0}]}"#;
        assert!(serde_json::from_str::<DependencyGraph>(bad).is_err());
        let mut g = DependencyGraph::new();
        let a = g.add_node(node("a", 0));
        let b = g.add_node(node("b", 1));
        g.add_edge(a, b, 0).unwrap();
        let back: DependencyGraph = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn canonical_form_ignores_numbering() {
        let mut g1 = DependencyGraph::new();
        let a = g1.add_node(node("a", 0));
        let b = g1.add_node(node("b", 0));
        let c = g1.add_node(node("c", 2));
        g1.add_edge(a, c, 0).unwrap();
        g1.add_edge(b, c, 1).unwrap();

        let mut g2 = DependencyGraph::new();
        let c = g2.add_node(node("c", 2));
        let b = g2.add_node(node("b", 0));
        let a = g2.add_node(node("a", 0));
        g2.add_edge(b, c, 1).unwrap();
        g2.add_edge(a, c, 0).unwrap();
        assert_eq!(g1.canonical_form(), g2.canonical_form());

        let mut g3 = DependencyGraph::new();
        let a = g3.add_node(node("a", 0));
        let b = g3.add_node(node("b", 0));
        let c = g3.add_node(node("c", 2));
        g3.add_edge(b, c, 0).unwrap();
        g3.add_edge(a, c, 1).unwrap();
        assert_ne!(g1.canonical_form(), g3.canonical_form());
    }
}
