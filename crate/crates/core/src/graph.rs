//! Text-attributed graph storage: typed nodes with keyed text features and
//! typed directed adjacency, loaded from a JSON-lines file.
//!
//! A graph file starts with a single `{"schema": {...}}` line followed by any
//! mix of `{"node": {...}}` and `{"edge": {...}}` lines. Edge endpoints are
//! resolved after the whole file has been read, so edges may precede the
//! nodes they reference.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl std::borrow::Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: edge endpoint '{id}' does not exist")]
    DanglingEndpoint { id: String, line: usize },
    #[error("line {line}: duplicate node id '{id}'")]
    DuplicateNode { id: String, line: usize },
    #[error("unknown node id '{0}'")]
    UnknownNode(String),
    #[error("node '{id}' has no feature '{key}'")]
    UnknownFeatureKey { id: String, key: String },
    #[error("unknown edge type '{0}'")]
    UnknownEdgeType(String),
}

/// Node and edge vocabulary of a graph plus the free-text description that
/// is shown to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSchema {
    pub node_types: Vec<String>,
    pub edge_types: Vec<String>,
    #[serde(default, rename = "feature_keys_per_node_type")]
    pub feature_keys: BTreeMap<String, Vec<String>>,
    /// The name-like feature of each node type; it is what gets indexed for
    /// retrieval and what answers are rendered from.
    #[serde(rename = "primary_feature_key_per_node_type")]
    pub primary_feature: BTreeMap<String, String>,
    pub description: String,
    /// Edge types whose edges are inserted in both directions on load.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub symmetric_edge_types: Vec<String>,
}

impl GraphSchema {
    fn empty() -> Self {
        GraphSchema {
            node_types: Vec::new(),
            edge_types: Vec::new(),
            feature_keys: BTreeMap::new(),
            primary_feature: BTreeMap::new(),
            description: "An empty graph.".to_string(),
            symmetric_edge_types: Vec::new(),
        }
    }

    pub fn has_edge_type(&self, edge_type: &str) -> bool {
        self.edge_types.iter().any(|t| t == edge_type)
    }

    fn validate(&self) -> Result<(), String> {
        if self.description.trim().is_empty() {
            return Err("schema description must be non-empty".into());
        }
        for ty in &self.node_types {
            if !self.primary_feature.contains_key(ty) {
                return Err(format!("node type '{ty}' has no primary feature key"));
            }
        }
        for ty in &self.symmetric_edge_types {
            if !self.has_edge_type(ty) {
                return Err(format!(
                    "symmetric edge type '{ty}' is not a declared edge type"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    #[serde(rename = "type")]
    pub node_type: String,
    pub features: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct EdgeRecord {
    src: String,
    dst: String,
    #[serde(rename = "type")]
    edge_type: String,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum Record {
    Schema(GraphSchema),
    Node(Node),
    Edge(EdgeRecord),
}

/// A capped neighbor listing. `ids` holds at most the cap; `total` is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbors<'g> {
    pub ids: &'g [NodeId],
    pub total: usize,
}

impl Neighbors<'_> {
    pub fn truncated(&self) -> bool {
        self.ids.len() < self.total
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    nodes: BTreeMap<NodeId, Node>,
    adjacency: BTreeMap<NodeId, BTreeMap<String, Vec<NodeId>>>,
    schema: GraphSchema,
    edge_count: usize,
}

impl Graph {
    pub fn load(path: impl AsRef<Path>) -> Result<Graph, GraphError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(BufReader::new(file), &path.display().to_string())
    }

    pub fn from_reader(reader: impl BufRead, origin: &str) -> Result<Graph, GraphError> {
        let mut builder: Option<GraphBuilder> = None;
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|source| GraphError::Io {
                path: origin.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(&line).map_err(|e| GraphError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            match (record, builder.as_mut()) {
                (Record::Schema(schema), None) => {
                    builder = Some(GraphBuilder::new(schema).map_err(|message| {
                        GraphError::Malformed {
                            line: line_no,
                            message,
                        }
                    })?);
                }
                (Record::Schema(_), Some(_)) => {
                    return Err(GraphError::Malformed {
                        line: line_no,
                        message: "only one schema record is allowed".into(),
                    })
                }
                (_, None) => {
                    return Err(GraphError::Malformed {
                        line: line_no,
                        message: "the first record must be the schema".into(),
                    })
                }
                (Record::Node(node), Some(b)) => b.add_node_at(node, Some(line_no))?,
                (Record::Edge(e), Some(b)) => {
                    b.add_edge_at(&e.src, &e.dst, &e.edge_type, Some(line_no))?
                }
            }
        }
        match builder {
            Some(b) => b.build(),
            None => GraphBuilder::new(GraphSchema::empty())
                .expect("empty schema is valid")
                .build(),
        }
    }

    /// Writes the graph back out in the JSON-lines format accepted by [`Graph::load`].
    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", serde_json::json!({ "schema": self.schema }))?;
        for node in self.nodes.values() {
            writeln!(w, "{}", serde_json::json!({ "node": node }))?;
        }
        for (src, by_type) in &self.adjacency {
            for (ty, dsts) in by_type {
                let symmetric = self.schema.symmetric_edge_types.contains(ty);
                for dst in dsts {
                    if symmetric && dst < src {
                        continue;
                    }
                    let edge = EdgeRecord {
                        src: src.to_string(),
                        dst: dst.to_string(),
                        edge_type: ty.clone(),
                    };
                    writeln!(w, "{}", serde_json::json!({ "edge": edge }))?;
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Logical edge count: a symmetric edge counts once.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &str) -> Result<&Node, GraphError> {
        self.nodes
            .get(id)
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    pub fn node_feature(&self, id: &str, key: &str) -> Result<&str, GraphError> {
        let node = self.node(id)?;
        node.features
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| GraphError::UnknownFeatureKey {
                id: id.to_string(),
                key: key.to_string(),
            })
    }

    /// The name-like feature of a node, as designated by the schema.
    pub fn primary_text(&self, id: &str) -> Option<&str> {
        let node = self.nodes.get(id)?;
        let key = self.schema.primary_feature.get(&node.node_type)?;
        node.features.get(key).map(String::as_str)
    }

    /// Full sorted neighbor list.
    pub fn neighbors(&self, id: &str, edge_type: &str) -> Result<&[NodeId], GraphError> {
        self.node(id)?;
        if !self.schema.has_edge_type(edge_type) {
            return Err(GraphError::UnknownEdgeType(edge_type.to_string()));
        }
        Ok(self
            .adjacency
            .get(id)
            .and_then(|m| m.get(edge_type))
            .map(Vec::as_slice)
            .unwrap_or(&[]))
    }

    pub fn neighbors_capped(
        &self,
        id: &str,
        edge_type: &str,
        cap: usize,
    ) -> Result<Neighbors<'_>, GraphError> {
        let all = self.neighbors(id, edge_type)?;
        Ok(Neighbors {
            ids: &all[..all.len().min(cap)],
            total: all.len(),
        })
    }

    pub fn degree(&self, id: &str, edge_type: &str) -> Result<usize, GraphError> {
        self.neighbors(id, edge_type).map(<[NodeId]>::len)
    }

    /// Edge types along which `id` has at least one outgoing neighbor, sorted.
    pub fn incident_edge_types(&self, id: &str) -> Vec<&str> {
        self.adjacency
            .get(id)
            .map(|m| {
                m.iter()
                    .filter(|(_, v)| !v.is_empty())
                    .map(|(k, _)| k.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// SHA-256 over the sorted node-id set, truncated to 64 bits.
    pub fn checksum(&self) -> u64 {
        node_set_checksum(self.nodes.keys().map(NodeId::as_str))
    }
}

pub(crate) fn node_set_checksum<'a>(ids: impl Iterator<Item = &'a str>) -> u64 {
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Incremental graph construction with the same validation as file loading.
#[derive(Debug)]
pub struct GraphBuilder {
    schema: GraphSchema,
    nodes: BTreeMap<NodeId, Node>,
    edges: Vec<(String, String, String, Option<usize>)>,
}

impl GraphBuilder {
    pub fn new(schema: GraphSchema) -> Result<Self, String> {
        schema.validate()?;
        Ok(GraphBuilder {
            schema,
            nodes: BTreeMap::new(),
            edges: Vec::new(),
        })
    }

    pub fn add_node(
        &mut self,
        id: &str,
        node_type: &str,
        features: &[(&str, &str)],
    ) -> Result<(), GraphError> {
        let node = Node {
            id: NodeId::new(id),
            node_type: node_type.to_string(),
            features: features
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        };
        self.add_node_at(node, None)
    }

    pub fn add_edge(&mut self, src: &str, dst: &str, edge_type: &str) -> Result<(), GraphError> {
        self.add_edge_at(src, dst, edge_type, None)
    }

    fn add_node_at(&mut self, node: Node, line: Option<usize>) -> Result<(), GraphError> {
        let line_no = line.unwrap_or(0);
        let malformed = |message: String| GraphError::Malformed {
            line: line_no,
            message,
        };
        if node.id.as_str().is_empty() {
            return Err(malformed("node id must be non-empty".into()));
        }
        if !self.schema.node_types.contains(&node.node_type) {
            return Err(malformed(format!("unknown node type '{}'", node.node_type)));
        }
        if node.features.keys().any(|k| k.is_empty()) {
            return Err(malformed(format!(
                "node '{}' has an empty feature key",
                node.id
            )));
        }
        if let Some(allowed) = self.schema.feature_keys.get(&node.node_type) {
            if let Some(k) = node.features.keys().find(|k| !allowed.contains(k)) {
                return Err(malformed(format!(
                    "feature '{k}' is not declared for node type '{}'",
                    node.node_type
                )));
            }
        }
        let primary = &self.schema.primary_feature[&node.node_type];
        if !node.features.contains_key(primary) {
            return Err(malformed(format!(
                "node '{}' lacks its primary feature '{primary}'",
                node.id
            )));
        }
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateNode {
                id: node.id.to_string(),
                line: line_no,
            });
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    fn add_edge_at(
        &mut self,
        src: &str,
        dst: &str,
        edge_type: &str,
        line: Option<usize>,
    ) -> Result<(), GraphError> {
        if !self.schema.has_edge_type(edge_type) {
            return Err(GraphError::Malformed {
                line: line.unwrap_or(0),
                message: format!("unknown edge type '{edge_type}'"),
            });
        }
        self.edges.push((
            src.to_string(),
            dst.to_string(),
            edge_type.to_string(),
            line,
        ));
        Ok(())
    }

    pub fn build(self) -> Result<Graph, GraphError> {
        let mut sets: BTreeMap<NodeId, BTreeMap<String, BTreeSet<NodeId>>> = BTreeMap::new();
        for (src, dst, ty, line) in &self.edges {
            for endpoint in [src, dst] {
                if !self.nodes.contains_key(endpoint.as_str()) {
                    return Err(GraphError::DanglingEndpoint {
                        id: endpoint.clone(),
                        line: line.unwrap_or(0),
                    });
                }
            }
            let mut insert = |a: &str, b: &str| {
                sets.entry(NodeId::new(a))
                    .or_default()
                    .entry(ty.clone())
                    .or_default()
                    .insert(NodeId::new(b));
            };
            insert(src, dst);
            if self.schema.symmetric_edge_types.contains(ty) {
                insert(dst, src);
            }
        }
        let mut edge_count = 0;
        let adjacency = sets
            .into_iter()
            .map(|(src, by_type)| {
                let by_type = by_type
                    .into_iter()
                    .map(|(ty, dsts)| {
                        let symmetric = self.schema.symmetric_edge_types.contains(&ty);
                        edge_count += dsts.iter().filter(|d| !symmetric || **d >= src).count();
                        (ty, dsts.into_iter().collect::<Vec<_>>())
                    })
                    .collect();
                (src, by_type)
            })
            .collect();
        Ok(Graph {
            nodes: self.nodes,
            adjacency,
            schema: self.schema,
            edge_count,
        })
    }
}
