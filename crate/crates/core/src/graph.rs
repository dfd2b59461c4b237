//! Knowledge-graph data model.
//!
//! A [`KnowledgeGraph`] is validated once in [`KnowledgeGraph::build`] and is
//! immutable afterwards. Nodes are stored in ascending id order and
//! adjacency lists hold dense positions, so neighbor iteration is a slice
//! walk and always ascending by id.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("edge {src}->{dst} references missing node {missing}")]
    DanglingEdge {
        src: NodeId,
        dst: NodeId,
        missing: NodeId,
    },
    #[error("feature length mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate edge {src}->{dst} (label {label:?})")]
    DuplicateEdge {
        src: NodeId,
        dst: NodeId,
        label: Option<String>,
    },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("non-finite feature value at index {index}")]
    NonFinite { index: usize },
    #[error("feature_dim must be positive")]
    ZeroDim,
    #[error("invalid graph JSON: {0}")]
    Json(String),
}

impl GraphError {
    pub fn class(&self) -> &'static str {
        match self {
            GraphError::EmptyGraph => "EmptyGraph",
            GraphError::DanglingEdge { .. } => "DanglingEdge",
            GraphError::DimMismatch { .. } | GraphError::ZeroDim => "DimMismatch",
            GraphError::DuplicateEdge { .. } => "DuplicateEdge",
            GraphError::DuplicateNode(_) => "DuplicateNode",
            GraphError::UnknownNode(_) => "UnknownNode",
            GraphError::NonFinite { .. } => "NonFiniteInput",
            GraphError::Json(_) => "ParseError",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u64> for NodeId {
    fn from(v: u64) -> Self {
        NodeId(v)
    }
}

/// Initial node state. Every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GraphError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GraphError::NonFinite { index });
        }
        Ok(FeatureVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for FeatureVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        FeatureVector::new(values).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Edge {
    pub fn new(src: impl Into<NodeId>, dst: impl Into<NodeId>) -> Self {
        Edge {
            src: src.into(),
            dst: dst.into(),
            label: None,
        }
    }

    pub fn labeled(src: impl Into<NodeId>, dst: impl Into<NodeId>, label: &str) -> Self {
        Edge {
            src: src.into(),
            dst: dst.into(),
            label: Some(label.to_string()),
        }
    }

    pub fn is_self_loop(&self) -> bool {
        self.src == self.dst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Directedness {
    #[default]
    Undirected,
    Directed,
}

/// Validated graph `G = (V, E)` with per-node features.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    ids: Vec<NodeId>,
    features: Vec<FeatureVector>,
    edges: Vec<Edge>,
    directedness: Directedness,
    feature_dim: usize,
    // Dense positions of the message sources for each node, ascending.
    adjacency: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    /// Validates nodes and edges and builds the adjacency lists.
    pub fn build(
        node_specs: Vec<(NodeId, FeatureVector)>,
        edge_specs: Vec<Edge>,
        directedness: Directedness,
    ) -> Result<Self, GraphError> {
        let feature_dim = match node_specs.first() {
            None => return Err(GraphError::EmptyGraph),
            Some((_, f)) => f.len(),
        };
        if feature_dim == 0 {
            return Err(GraphError::ZeroDim);
        }

        let mut by_id = BTreeMap::new();
        for (id, features) in node_specs {
            if features.len() != feature_dim {
                return Err(GraphError::DimMismatch {
                    expected: feature_dim,
                    got: features.len(),
                });
            }
            if by_id.insert(id, features).is_some() {
                return Err(GraphError::DuplicateNode(id));
            }
        }
        let (ids, features): (Vec<_>, Vec<_>) = by_id.into_iter().unzip();
        let position = |id: NodeId| ids.binary_search(&id).ok();

        let mut seen = HashSet::with_capacity(edge_specs.len());
        let mut adjacency = vec![Vec::new(); ids.len()];
        for edge in &edge_specs {
            let src = position(edge.src);
            let dst = position(edge.dst);
            let (src, dst) = match (src, dst) {
                (Some(s), Some(d)) => (s, d),
                (None, _) => {
                    return Err(GraphError::DanglingEdge {
                        src: edge.src,
                        dst: edge.dst,
                        missing: edge.src,
                    })
                }
                (_, None) => {
                    return Err(GraphError::DanglingEdge {
                        src: edge.src,
                        dst: edge.dst,
                        missing: edge.dst,
                    })
                }
            };
            let key = match directedness {
                Directedness::Directed => (src, dst, edge.label.clone()),
                Directedness::Undirected => (src.min(dst), src.max(dst), edge.label.clone()),
            };
            if !seen.insert(key) {
                return Err(GraphError::DuplicateEdge {
                    src: edge.src,
                    dst: edge.dst,
                    label: edge.label.clone(),
                });
            }
            // Messages flow along the edge into `dst`.
            adjacency[dst].push(src);
            if directedness == Directedness::Undirected && src != dst {
                adjacency[src].push(dst);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }

        Ok(KnowledgeGraph {
            ids,
            features,
            edges: edge_specs,
            directedness,
            feature_dim,
            adjacency,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn directedness(&self) -> Directedness {
        self.directedness
    }

    pub fn is_directed(&self) -> bool {
        self.directedness == Directedness::Directed
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Node ids in ascending order.
    pub fn node_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.position(id).is_some()
    }

    pub fn features(&self, id: NodeId) -> Option<&FeatureVector> {
        self.position(id).map(|p| &self.features[p])
    }

    /// Features in the same order as [`node_ids`](Self::node_ids).
    pub fn feature_rows(&self) -> &[FeatureVector] {
        &self.features
    }

    /// `N(i)`: nodes whose state flows into `id`, ascending by id.
    ///
    /// For undirected graphs the relation is symmetric; for directed graphs
    /// these are the in-neighbors.
    pub fn neighbors(&self, id: NodeId) -> Result<Vec<NodeId>, GraphError> {
        let p = self.position(id).ok_or(GraphError::UnknownNode(id))?;
        Ok(self.adjacency[p].iter().map(|&q| self.ids[q]).collect())
    }

    /// Same as [`neighbors`](Self::neighbors) but by dense position.
    pub(crate) fn neighbor_positions(&self, position: usize) -> &[usize] {
        &self.adjacency[position]
    }

    pub fn self_loop_count(&self) -> usize {
        self.edges.iter().filter(|e| e.is_self_loop()).count()
    }

    fn position(&self, id: NodeId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDocument =
            serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))?;
        doc.into_graph()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphDocument::from(self)).expect("graph document serializes")
    }
}

/// On-disk graph JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDocument {
    pub feature_dim: usize,
    #[serde(default)]
    pub directed: bool,
    pub nodes: Vec<NodeDocument>,
    #[serde(default)]
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDocument {
    pub id: NodeId,
    pub features: FeatureVector,
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<KnowledgeGraph, GraphError> {
        if self.feature_dim == 0 {
            return Err(GraphError::ZeroDim);
        }
        if let Some(bad) = self.nodes.iter().find(|n| n.features.len() != self.feature_dim) {
            return Err(GraphError::DimMismatch {
                expected: self.feature_dim,
                got: bad.features.len(),
            });
        }
        let directedness = if self.directed {
            Directedness::Directed
        } else {
            Directedness::Undirected
        };
        KnowledgeGraph::build(
            self.nodes.into_iter().map(|n| (n.id, n.features)).collect(),
            self.edges,
            directedness,
        )
    }
}

impl From<&KnowledgeGraph> for GraphDocument {
    fn from(g: &KnowledgeGraph) -> Self {
        GraphDocument {
            feature_dim: g.feature_dim,
            directed: g.is_directed(),
            nodes: g
                .ids
                .iter()
                .zip(&g.features)
                .map(|(&id, f)| NodeDocument {
                    id,
                    features: f.clone(),
                })
                .collect(),
            edges: g.edges.clone(),
        }
    }
}
