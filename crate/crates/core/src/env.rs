//! The question-answering episode as a deterministic MDP over a graph.
//!
//! A [`State`] starts with only the question; each [`Environment::step`]
//! appends exactly one [`Step`]. Graph lookups that fail never abort the
//! episode: they come back as `Error: ...` observations with
//! [`Step::env_error`] set, so the agent can recover.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionKind};
use crate::graph::{Graph, GraphError, NodeId};
use crate::index::{IndexError, RetrievalHit, RetrievalIndex};
use crate::text::{is_numeric, keyword_spans};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("question must be non-empty")]
    EmptyQuery,
    #[error("cannot step a terminal state")]
    TerminalState,
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub max_depth: usize,
    pub neighbor_cap: usize,
    /// Hits recorded in the step log for `RetrieveNode`; the observation
    /// always names only the top hit.
    pub retrieval_k: usize,
    /// Maximum number of query keyword spans offered as `RetrieveNode` candidates.
    pub keyword_cap: usize,
    /// Offer `RetrieveNode` candidates even after a current node is set.
    pub retrieve_always: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            max_depth: 10,
            neighbor_cap: 50,
            retrieval_k: 1,
            keyword_cap: 3,
            retrieve_always: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_depth == 0 {
            return Err(EnvError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if self.neighbor_cap == 0 || self.retrieval_k == 0 {
            return Err(EnvError::InvalidConfig(
                "neighbor_cap and retrieval_k must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvErrorTag {
    UnknownNode,
    UnknownFeatureKey,
    UnknownEdgeType,
    NoMatch,
    InvalidAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub thought: String,
    pub action: Action,
    pub observation: String,
    #[serde(default)]
    pub env_error: Option<EnvErrorTag>,
    /// Ranked retrieval hits behind a `RetrieveNode` observation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieval: Vec<RetrievalHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub query: String,
    pub steps: Vec<Step>,
    pub visited_nodes: Vec<NodeId>,
    pub current_node: Option<NodeId>,
    pub terminal: bool,
    pub final_answer: Option<String>,
}

impl State {
    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn last_step(&self) -> Option<&Step> {
        self.steps.last()
    }

    pub fn has_visited(&self, id: &str) -> bool {
        self.visited_nodes.iter().any(|v| v.as_str() == id)
    }

    fn visit(&mut self, id: &NodeId) {
        if !self.has_visited(id.as_str()) {
            self.visited_nodes.push(id.clone());
        }
        self.current_node = Some(id.clone());
    }
}

/// Observation text used for `Finish` steps.
pub const FINISH_OBSERVATION: &str = "Episode finished.";

#[derive(Debug, Clone, Copy)]
pub struct Environment<'g> {
    graph: &'g Graph,
    index: &'g RetrievalIndex,
    cfg: &'g EnvConfig,
}

impl<'g> Environment<'g> {
    pub fn new(
        graph: &'g Graph,
        index: &'g RetrievalIndex,
        cfg: &'g EnvConfig,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        index.verify(graph)?;
        Ok(Environment { graph, index, cfg })
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn index(&self) -> &'g RetrievalIndex {
        self.index
    }

    pub fn config(&self) -> &'g EnvConfig {
        self.cfg
    }

    pub fn reset(&self, query: &str) -> Result<State, EnvError> {
        if query.trim().is_empty() {
            return Err(EnvError::EmptyQuery);
        }
        Ok(State {
            query: query.to_string(),
            steps: Vec::new(),
            visited_nodes: Vec::new(),
            current_node: None,
            terminal: false,
            final_answer: None,
        })
    }

    /// Executes `action` and returns the successor state. The only hard
    /// failure is stepping a state that is already terminal.
    pub fn step(&self, state: &State, thought: &str, action: &Action) -> Result<State, EnvError> {
        if state.terminal {
            return Err(EnvError::TerminalState);
        }
        let mut next = state.clone();
        let mut retrieval = Vec::new();
        let outcome: Result<String, (EnvErrorTag, String)> =
            if action.kind() != ActionKind::Finish && !action.is_valid() {
                Err((
                    EnvErrorTag::InvalidAction,
                    format!("invalid action '{action}'"),
                ))
            } else {
                match action.kind() {
                    ActionKind::RetrieveNode => {
                        let keyword = action.arg(0);
                        match self.index.retrieve(keyword, self.cfg.retrieval_k) {
                            Ok(hits) if !hits.is_empty() => {
                                let id = hits[0].id.clone();
                                next.visit(&id);
                                retrieval = hits;
                                Ok(format!("The ID of this retrieval target node is {id}."))
                            }
                            Ok(_) | Err(IndexError::EmptyQuery) => {
                                Err((EnvErrorTag::NoMatch, format!("no node matches '{keyword}'")))
                            }
                            Err(e) => Err((EnvErrorTag::NoMatch, e.to_string())),
                        }
                    }
                    ActionKind::NodeFeature => self
                        .graph
                        .node_feature(action.arg(0), action.arg(1))
                        .map(|v| {
                            if v.trim().is_empty() {
                                "(empty)".to_string()
                            } else {
                                v.to_string()
                            }
                        })
                        .map_err(graph_error),
                    ActionKind::NeighbourCheck => self
                        .graph
                        .neighbors_capped(action.arg(0), action.arg(1), self.cfg.neighbor_cap)
                        .map(|n| self.render_neighbors(action.arg(0), action.arg(1), n))
                        .map_err(graph_error),
                    ActionKind::NodeDegree => self
                        .graph
                        .degree(action.arg(0), action.arg(1))
                        .map(|d| d.to_string())
                        .map_err(graph_error),
                    ActionKind::Finish => {
                        next.final_answer = Some(action.arg(0).to_string());
                        next.terminal = true;
                        Ok(FINISH_OBSERVATION.to_string())
                    }
                }
            };
        let (observation, env_error) = match outcome {
            Ok(obs) => {
                if matches!(
                    action.kind(),
                    ActionKind::NodeFeature | ActionKind::NeighbourCheck | ActionKind::NodeDegree
                ) {
                    next.visit(&NodeId::new(action.arg(0)));
                }
                (obs, None)
            }
            Err((tag, msg)) => (format!("Error: {msg}."), Some(tag)),
        };
        next.steps.push(Step {
            index: state.steps.len() + 1,
            thought: thought.to_string(),
            action: action.clone(),
            observation,
            env_error,
            retrieval,
        });
        if !next.terminal && next.steps.len() >= self.cfg.max_depth {
            next.terminal = true;
        }
        Ok(next)
    }

    fn render_neighbors(
        &self,
        id: &str,
        edge_type: &str,
        n: crate::graph::Neighbors<'_>,
    ) -> String {
        if n.total == 0 {
            return format!("Node {id} has no {edge_type} neighbors.");
        }
        let listed: Vec<String> = n
            .ids
            .iter()
            .map(|nid| match self.graph.primary_text(nid.as_str()) {
                Some(name) if !name.trim().is_empty() => format!("{nid} ({name})"),
                _ => nid.to_string(),
            })
            .collect();
        let mut out = format!(
            "The {edge_type} neighbors of {id} are: {}.",
            listed.join(", ")
        );
        if n.truncated() {
            out.push_str(&format!(
                " Showing {} of {}; the list is truncated.",
                n.ids.len(),
                n.total
            ));
        }
        out
    }

    /// Neighbors listed by the last step, when it was a successful `NeighbourCheck`.
    pub fn listed_neighbors(&self, state: &State) -> &'g [NodeId] {
        match state.last_step() {
            Some(step)
                if step.action.kind() == ActionKind::NeighbourCheck && step.env_error.is_none() =>
            {
                self.graph
                    .neighbors_capped(
                        step.action.arg(0),
                        step.action.arg(1),
                        self.cfg.neighbor_cap,
                    )
                    .map(|n| n.ids)
                    .unwrap_or(&[])
            }
            _ => &[],
        }
    }

    /// The node an action is about: `args[0]` for node actions, the node a
    /// `Finish` answer was drawn from (a feature value of the current node or
    /// the name of a listed neighbor), and none otherwise.
    pub fn referenced_node(&self, state: &State, action: &Action) -> Option<NodeId> {
        match action.kind() {
            ActionKind::RetrieveNode => None,
            ActionKind::NodeFeature | ActionKind::NeighbourCheck | ActionKind::NodeDegree => {
                Some(NodeId::from(action.arg(0)))
            }
            ActionKind::Finish => {
                let answer = action.arg(0);
                if let Some(cur) = &state.current_node {
                    if let Ok(node) = self.graph.node(cur.as_str()) {
                        if node.features.values().any(|v| v == answer) {
                            return Some(cur.clone());
                        }
                    }
                }
                self.listed_neighbors(state)
                    .iter()
                    .find(|nid| self.graph.primary_text(nid.as_str()) == Some(answer))
                    .cloned()
            }
        }
    }

    /// The finite action menu at `state`, duplicate-free, grouped by kind in
    /// the order Retrieve, Feature, NeighbourCheck, Degree, Finish and sorted
    /// by arguments within a kind. Never empty: when nothing else applies the
    /// menu is a single empty-answer `Finish`.
    pub fn candidate_actions(&self, state: &State) -> Result<Vec<Action>, EnvError> {
        if state.terminal {
            return Err(EnvError::TerminalState);
        }
        let mut by_kind: [Vec<Action>; 5] = Default::default();
        if state.current_node.is_none() || self.cfg.retrieve_always {
            for span in keyword_spans(&state.query)
                .into_iter()
                .take(self.cfg.keyword_cap)
            {
                by_kind[0].push(Action::retrieve(&span));
            }
        }
        if let Some(cur) = &state.current_node {
            if let Ok(node) = self.graph.node(cur.as_str()) {
                for (key, value) in &node.features {
                    by_kind[1].push(Action::feature(cur.as_str(), key));
                    if !value.trim().is_empty() {
                        by_kind[4].push(Action::finish(value));
                    }
                }
                for ty in self.graph.incident_edge_types(cur.as_str()) {
                    by_kind[2].push(Action::neighbours(cur.as_str(), ty));
                    by_kind[3].push(Action::degree(cur.as_str(), ty));
                }
            }
        }
        if let Some(step) = state.last_step() {
            if step.env_error.is_none() && is_numeric(&step.observation) {
                by_kind[4].push(Action::finish(step.observation.trim()));
            }
        }
        for nid in self.listed_neighbors(state) {
            if let Some(name) = self.graph.primary_text(nid.as_str()) {
                if !name.trim().is_empty() {
                    by_kind[4].push(Action::finish(name));
                }
            }
        }
        let mut out = Vec::new();
        for mut group in by_kind {
            group.sort_by(|a, b| a.args().cmp(b.args()));
            group.dedup();
            out.extend(group);
        }
        if out.is_empty() {
            out.push(Action::finish(""));
        }
        Ok(out)
    }
}

fn graph_error(e: GraphError) -> (EnvErrorTag, String) {
    let tag = match &e {
        GraphError::UnknownNode(_) => EnvErrorTag::UnknownNode,
        GraphError::UnknownFeatureKey { .. } => EnvErrorTag::UnknownFeatureKey,
        GraphError::UnknownEdgeType(_) => EnvErrorTag::UnknownEdgeType,
        _ => EnvErrorTag::InvalidAction,
    };
    (tag, e.to_string())
}
