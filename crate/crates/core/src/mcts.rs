//! Tree search over environment states: UCB selection, width-limited
//! expansion with evaluator-initialized values, policy rollouts, running-mean
//! backpropagation, and a receding-horizon commit loop.
//!
//! Visit bookkeeping: every node counts its own creation as one visit, so
//! `N(s) = Σ_a N(s,a) + 1` holds at all times and `ln N(s)` is defined the
//! first time a node is selected through.

use std::sync::Arc;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionKind};
use crate::chat::{ChatClient, ChatError, ChatRequest};
use crate::env::{EnvError, Environment, State};
use crate::policy::{ActionProposal, Policy, PolicyError, SearchRng};
use crate::prompt::render_steps;
use crate::text::{content_tokens, is_numeric, overlap, tokenize};

#[derive(Debug, Error)]
pub enum MctsError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("evaluator: {0}")]
    Evaluator(#[from] ChatError),
    #[error("node has no unexpanded candidates")]
    NothingToExpand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MctsConfig {
    pub c_explore: f64,
    /// Children added per expansion.
    pub width: usize,
    pub max_depth: usize,
    pub simulations_per_move: usize,
    pub rollout_temperature: f64,
    pub seed: u64,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            c_explore: std::f64::consts::SQRT_2,
            width: 3,
            max_depth: 10,
            simulations_per_move: 50,
            rollout_temperature: 1.0,
            seed: 0,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<(), MctsError> {
        let bad = |m: &str| Err(MctsError::InvalidConfig(m.to_string()));
        if !(self.c_explore.is_finite() && self.c_explore > 0.0) {
            return bad("c_explore must be positive");
        }
        if self.width == 0 {
            return bad("width must be >= 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1");
        }
        if self.simulations_per_move == 0 {
            return bad("simulations_per_move must be >= 1");
        }
        if !(self.rollout_temperature.is_finite() && self.rollout_temperature > 0.0) {
            return bad("rollout_temperature must be positive");
        }
        Ok(())
    }
}

/// `Q + c·sqrt(ln n_s / n_sa)`, or `+inf` for an unvisited action.
pub fn ucb_score(q: f64, n_s: u64, n_sa: u64, c: f64) -> f64 {
    if n_sa == 0 {
        return f64::INFINITY;
    }
    q + c * ((n_s as f64).ln() / n_sa as f64).sqrt()
}

/// Index of the `(Q, N)` pair with the highest UCB score; the first one wins
/// ties. `None` for an empty slice.
pub fn best_child(stats: &[(f64, u64)], n_s: u64, c: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &(q, n)) in stats.iter().enumerate() {
        let score = ucb_score(q, n_s, n, c);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i)
}

/// The running-mean update `Q ← (Q·N + v)/(N + 1)`, `N ← N + 1`.
pub fn update_stats(q: f64, n: u64, v: f64) -> (f64, u64) {
    ((q * n as f64 + v) / (n as f64 + 1.0), n + 1)
}

/// Scores a (possibly partial) reasoning path in [0, 1].
pub trait Evaluator: Sync {
    fn value(&self, path: &State) -> Result<f64, ChatError>;
}

/// Model-free evaluator:
/// `v = 0.5·overlap(query, evidence) + 0.5·grounded`, where evidence is the
/// content tokens of every error-free graph step's arguments and observation.
/// `grounded` is 1 when the path ends in a `Finish` whose non-empty answer is
/// not just a restatement of the query and appears in the observation of a
/// graph step that is relevant to the question: its arguments share a token
/// with the query, and it is a `NodeDegree` exactly when the question asks
/// for a count.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicEvaluator;

impl HeuristicEvaluator {
    pub fn score(path: &State) -> f64 {
        let query = content_tokens(&path.query);
        let counting = asks_for_count(&path.query);
        let mut evidence = std::collections::BTreeSet::new();
        // observation tokens of steps that could have produced the answer
        let mut sources = Vec::new();
        for step in &path.steps {
            if step.action.kind() == ActionKind::Finish || step.env_error.is_some() {
                continue;
            }
            let obs = content_tokens(&step.observation);
            let args = content_tokens(&step.action.args().join(" "));
            let relevant = !args.is_disjoint(&query)
                && (step.action.kind() == ActionKind::NodeDegree) == counting;
            evidence.extend(obs.iter().cloned());
            evidence.extend(args);
            if relevant {
                sources.push(obs);
            }
        }
        let coverage = overlap(&query, &evidence);
        let grounded = match (&path.final_answer, path.last_step()) {
            (Some(answer), Some(last)) if last.action.kind() == ActionKind::Finish => {
                let tokens = content_tokens(answer);
                !tokens.is_empty()
                    && sources.iter().any(|o| tokens.is_subset(o))
                    && !tokens.is_subset(&query)
                    && (!counting || is_numeric(answer))
            }
            _ => false,
        };
        (0.5 * coverage + if grounded { 0.5 } else { 0.0 }).clamp(0.0, 1.0)
    }
}

impl Evaluator for HeuristicEvaluator {
    fn value(&self, path: &State) -> Result<f64, ChatError> {
        Ok(Self::score(path))
    }
}

fn asks_for_count(query: &str) -> bool {
    let t = tokenize(query);
    t.windows(2).any(|w| {
        matches!(
            (w[0].as_str(), w[1].as_str()),
            ("how", "many") | ("number", "of")
        )
    })
}

/// Asks a chat endpoint to rate the path and reads the first number in the
/// reply. Unparseable replies score 0.
#[derive(Clone)]
pub struct LlmEvaluator {
    pub client: Arc<dyn ChatClient>,
    pub model: String,
}

impl LlmEvaluator {
    pub fn prompt(path: &State) -> String {
        format!(
            "Rate how consistent and relevant the following reasoning path is for answering \
             the question, as a number between 0 and 1. Reply with the number only.\n\n\
             Question: {}\n{}",
            path.query,
            render_steps(path)
        )
    }
}

/// First decimal number in `text`, clamped to [0, 1].
pub fn parse_score(text: &str) -> Option<f64> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let rest = &text[start..];
    let end = rest
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(rest.len());
    let v: f64 = rest[..end].trim_end_matches('.').parse().ok()?;
    v.is_finite().then(|| v.clamp(0.0, 1.0))
}

impl Evaluator for LlmEvaluator {
    fn value(&self, path: &State) -> Result<f64, ChatError> {
        let request = ChatRequest::user(&self.model, Self::prompt(path), 0.0, 1);
        let replies = self.client.complete(&request)?;
        Ok(replies.first().and_then(|r| parse_score(r)).unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub action: Action,
    pub thought: String,
    pub child: usize,
    pub q: f64,
    pub n: u64,
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub state: State,
    /// Policy proposals, best first; the first `expanded` of them are children.
    pub candidates: Vec<ActionProposal>,
    pub expanded: usize,
    pub edges: Vec<Edge>,
    pub node_visits: u64,
    pub prior_value: f64,
}

impl TreeNode {
    pub fn has_unexpanded(&self) -> bool {
        self.expanded < self.candidates.len()
    }

    pub fn edge_visits(&self) -> u64 {
        self.edges.iter().map(|e| e.n).sum()
    }
}

/// Arena-allocated search tree; node 0 is the original root.
#[derive(Debug, Clone)]
pub struct SearchTree {
    pub nodes: Vec<TreeNode>,
    pub c_explore: f64,
    pub max_depth: usize,
}

/// One selection step: the node left and the index of the edge taken.
pub type PathEntry = (usize, usize);

impl SearchTree {
    pub fn new(root: TreeNode, c_explore: f64, max_depth: usize) -> Self {
        SearchTree {
            nodes: vec![root],
            c_explore,
            max_depth,
        }
    }

    /// A node with one creation visit and no children.
    pub fn make_node(
        env: &Environment<'_>,
        state: State,
        policy: &dyn Policy,
        evaluator: &dyn Evaluator,
        max_depth: usize,
    ) -> Result<TreeNode, MctsError> {
        let prior_value = evaluator.value(&state)?.clamp(0.0, 1.0);
        let candidates = if state.terminal || state.depth() >= max_depth {
            Vec::new()
        } else {
            let mut c = policy.propose(env, &state)?;
            let mut seen = std::collections::HashSet::new();
            c.retain(|p| seen.insert(p.action.clone()));
            c
        };
        Ok(TreeNode {
            state,
            candidates,
            expanded: 0,
            edges: Vec::new(),
            node_visits: 1,
            prior_value,
        })
    }

    fn stops_selection(&self, node: &TreeNode) -> bool {
        node.state.terminal
            || node.has_unexpanded()
            || node.state.depth() >= self.max_depth
            || node.edges.is_empty()
    }

    /// Descends from `root` by UCB until a node that is terminal, has
    /// unexpanded candidates, or sits at the depth limit. Returns the edges
    /// taken and the node reached.
    pub fn select(&self, root: usize) -> (Vec<PathEntry>, usize) {
        let mut path = Vec::new();
        let mut at = root;
        loop {
            let node = &self.nodes[at];
            if self.stops_selection(node) {
                return (path, at);
            }
            let stats: Vec<(f64, u64)> = node.edges.iter().map(|e| (e.q, e.n)).collect();
            let i =
                best_child(&stats, node.node_visits, self.c_explore).expect("non-empty edge list");
            path.push((at, i));
            at = node.edges[i].child;
        }
    }

    /// Adds up to `width` children for the next unexpanded candidates. Each
    /// child edge starts at `Q = v(child)`, `N = 1`.
    pub fn expand(
        &mut self,
        leaf: usize,
        env: &Environment<'_>,
        policy: &dyn Policy,
        evaluator: &dyn Evaluator,
        width: usize,
    ) -> Result<Vec<usize>, MctsError> {
        let node = &self.nodes[leaf];
        if node.state.terminal || !node.has_unexpanded() {
            return Err(MctsError::NothingToExpand);
        }
        let end = (node.expanded + width).min(node.candidates.len());
        let todo: Vec<ActionProposal> = node.candidates[node.expanded..end].to_vec();
        let parent_state = node.state.clone();
        let mut created = Vec::new();
        for proposal in todo {
            let state = env.step(&parent_state, &proposal.thought, &proposal.action)?;
            let child = Self::make_node(env, state, policy, evaluator, self.max_depth)?;
            let v = child.prior_value;
            let id = self.nodes.len();
            self.nodes.push(child);
            let parent = &mut self.nodes[leaf];
            parent.edges.push(Edge {
                action: proposal.action,
                thought: proposal.thought,
                child: id,
                q: v,
                n: 1,
            });
            parent.node_visits += 1;
            parent.expanded += 1;
            created.push(id);
        }
        Ok(created)
    }

    /// Folds `v` into every edge on `path` and bumps each node's visit count.
    pub fn backpropagate(&mut self, path: &[PathEntry], v: f64) {
        for &(node, edge) in path.iter().rev() {
            let e = &mut self.nodes[node].edges[edge];
            (e.q, e.n) = update_stats(e.q, e.n, v);
            self.nodes[node].node_visits += 1;
        }
    }

    pub fn root_stats(&self, root: usize) -> Vec<ActionStat> {
        self.nodes[root]
            .edges
            .iter()
            .map(|e| ActionStat {
                action: e.action.clone(),
                q: e.q,
                n: e.n,
            })
            .collect()
    }
}

/// A simulated continuation and its evaluated value.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub state: State,
    /// Behavior log-probability of each sampled step, when the policy has them.
    pub log_probs: Vec<Option<f64>>,
    pub value: f64,
}

/// Samples from `policy` until `Finish`, the environment's depth limit, or
/// `max_depth` steps; then evaluates the resulting path.
pub fn simulate(
    env: &Environment<'_>,
    from: &State,
    policy: &dyn Policy,
    evaluator: &dyn Evaluator,
    max_depth: usize,
    rng: &mut SearchRng,
) -> Result<Rollout, MctsError> {
    let mut state = from.clone();
    let mut log_probs = Vec::new();
    while !state.terminal && state.depth() < max_depth {
        let p = policy.sample(env, &state, rng)?;
        state = env.step(&state, &p.thought, &p.action)?;
        log_probs.push(p.log_prob);
    }
    let value = evaluator.value(&state)?.clamp(0.0, 1.0);
    Ok(Rollout {
        state,
        log_probs,
        value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionStat {
    pub action: Action,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "N")]
    pub n: u64,
}

/// One line of the search-trace dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub move_index: usize,
    pub root_action_stats: Vec<ActionStat>,
    pub committed_action: Action,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Committed `Finish` argument; empty when the depth budget ran out.
    pub answer: String,
    /// The committed trajectory.
    pub state: State,
    pub trace: Vec<TraceRecord>,
    /// Visit statistics at the last root searched.
    pub root_stats: Vec<ActionStat>,
}

pub struct Mcts<'a> {
    pub env: &'a Environment<'a>,
    pub policy: &'a dyn Policy,
    pub rollout_policy: &'a dyn Policy,
    pub evaluator: &'a dyn Evaluator,
    pub cfg: &'a MctsConfig,
}

impl Mcts<'_> {
    fn depth_limit(&self) -> usize {
        self.cfg.max_depth.min(self.env.config().max_depth)
    }

    /// One select → expand → simulate → backpropagate iteration at `root`.
    pub fn iterate(
        &self,
        tree: &mut SearchTree,
        root: usize,
        rng: &mut SearchRng,
    ) -> Result<(), MctsError> {
        let (path, leaf) = tree.select(root);
        let node = &tree.nodes[leaf];
        if !node.state.terminal && node.has_unexpanded() {
            tree.expand(leaf, self.env, self.policy, self.evaluator, self.cfg.width)?;
        }
        let rollout = simulate(
            self.env,
            &tree.nodes[leaf].state,
            self.rollout_policy,
            self.evaluator,
            self.depth_limit(),
            rng,
        )?;
        tree.backpropagate(&path, rollout.value);
        Ok(())
    }

    /// Receding-horizon search from a fresh episode for `query`.
    pub fn search(&self, query: &str) -> Result<SearchOutcome, MctsError> {
        self.cfg.validate()?;
        let depth_limit = self.depth_limit();
        let mut rng = SearchRng::seed_from_u64(self.cfg.seed);
        let start = self.env.reset(query)?;
        let root_node =
            SearchTree::make_node(self.env, start, self.policy, self.evaluator, depth_limit)?;
        let mut tree = SearchTree::new(root_node, self.cfg.c_explore, depth_limit);
        let mut root = 0;
        let mut trace = Vec::new();
        let mut root_stats = Vec::new();
        while !tree.nodes[root].state.terminal && tree.nodes[root].state.depth() < depth_limit {
            for _ in 0..self.cfg.simulations_per_move {
                self.iterate(&mut tree, root, &mut rng)?;
            }
            let edges = &tree.nodes[root].edges;
            let Some(best) = most_visited(edges) else {
                break;
            };
            root_stats = tree.root_stats(root);
            trace.push(TraceRecord {
                move_index: trace.len(),
                root_action_stats: root_stats.clone(),
                committed_action: edges[best].action.clone(),
            });
            root = edges[best].child;
        }
        let state = tree.nodes[root].state.clone();
        Ok(SearchOutcome {
            answer: state.final_answer.clone().unwrap_or_default(),
            state,
            trace,
            root_stats,
        })
    }
}

/// Edge with the largest visit count; the earliest wins ties.
fn most_visited(edges: &[Edge]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, e) in edges.iter().enumerate() {
        if best.is_none_or(|b| e.n > edges[b].n) {
            best = Some(i);
        }
    }
    best
}
