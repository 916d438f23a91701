//! Action proposal: the [`Policy`] trait and its implementations.
//!
//! * [`SoftmaxPolicy`]: a log-linear policy over the environment's candidate
//!   menu; the only one that exposes probabilities and can be trained.
//! * [`ScriptedPolicy`]: replays a fixed script, then gives up.
//! * [`LlmPolicy`]: samples completions from a chat endpoint and parses them.

mod llm;
mod softmax;

use std::io::BufRead;

use rand::Rng;
use serde::Deserialize;
use thiserror::Error;

pub use crate::action::{parse_action, ParseError};
use crate::action::{Action, ActionKind};
use crate::chat::ChatError;
use crate::env::{EnvError, Environment, State};

pub use llm::{parse_completion, propose_llm, LlmPolicy};
pub use softmax::{
    featurize, featurize_in, FeatureVector, PolicyParams, SoftmaxPolicy, FEATURE_DIM,
};

pub type SearchRng = rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no candidate actions")]
    EmptyCandidates,
    #[error("action '{0}' is not a candidate at this state")]
    NotACandidate(String),
    #[error("every sampled completion was malformed")]
    AllMalformed,
    #[error("invalid policy parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("script line {line}: {message}")]
    Script { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionProposal {
    pub thought: String,
    pub action: Action,
    /// Natural-log probability, present only when the policy exposes it.
    pub log_prob: Option<f64>,
    /// Set when the proposal stands in for an unparseable model output.
    pub malformed: bool,
}

impl ActionProposal {
    pub fn new(action: Action, log_prob: Option<f64>) -> Self {
        ActionProposal {
            thought: templated_thought(&action),
            action,
            log_prob,
            malformed: false,
        }
    }

    pub fn give_up() -> Self {
        ActionProposal::new(Action::finish(""), None)
    }
}

pub trait Policy: Sync {
    /// Proposals at `state`, best first, without duplicates.
    fn propose(
        &self,
        env: &Environment<'_>,
        state: &State,
    ) -> Result<Vec<ActionProposal>, PolicyError>;

    /// One action drawn from the policy's distribution at `state`.
    fn sample(
        &self,
        env: &Environment<'_>,
        state: &State,
        rng: &mut SearchRng,
    ) -> Result<ActionProposal, PolicyError>;

    /// Whether [`ActionProposal::log_prob`] is populated.
    fn exposes_probabilities(&self) -> bool {
        false
    }
}

/// A short natural-language rationale for a generated action.
pub fn templated_thought(action: &Action) -> String {
    match action.kind() {
        ActionKind::RetrieveNode => format!(
            "We need to find the node in the graph that matches \"{}\".",
            action.arg(0)
        ),
        ActionKind::NodeFeature => format!(
            "We need the \"{}\" feature of node {}.",
            action.arg(1),
            action.arg(0)
        ),
        ActionKind::NeighbourCheck => format!(
            "We need to list the \"{}\" neighbors of node {}.",
            action.arg(1),
            action.arg(0)
        ),
        ActionKind::NodeDegree => format!(
            "We need to count the \"{}\" neighbors of node {}.",
            action.arg(1),
            action.arg(0)
        ),
        ActionKind::Finish if action.arg(0).is_empty() => {
            "The answer cannot be determined.".to_string()
        }
        ActionKind::Finish => format!("The answer is {}.", action.arg(0)),
    }
}

/// Draws an index from `probs` by inverse CDF. `probs` must sum to ~1.
pub(crate) fn sample_index(probs: &[f64], rng: &mut SearchRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Replays a fixed `(thought, action)` script by step index; once the script
/// is exhausted it proposes an empty-answer `Finish`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    script: Vec<(String, Action)>,
}

impl ScriptedPolicy {
    pub fn new(script: Vec<(String, Action)>) -> Self {
        ScriptedPolicy { script }
    }

    fn next(&self, state: &State) -> ActionProposal {
        match self.script.get(state.depth()) {
            Some((thought, action)) => ActionProposal {
                thought: thought.clone(),
                action: action.clone(),
                log_prob: Some(0.0),
                malformed: false,
            },
            None => ActionProposal {
                log_prob: Some(0.0),
                ..ActionProposal::give_up()
            },
        }
    }
}

impl Policy for ScriptedPolicy {
    fn propose(
        &self,
        _env: &Environment<'_>,
        state: &State,
    ) -> Result<Vec<ActionProposal>, PolicyError> {
        Ok(vec![self.next(state)])
    }

    fn sample(
        &self,
        _env: &Environment<'_>,
        state: &State,
        _rng: &mut SearchRng,
    ) -> Result<ActionProposal, PolicyError> {
        Ok(self.next(state))
    }

    fn exposes_probabilities(&self) -> bool {
        true
    }
}

#[derive(Deserialize)]
struct ScriptLine {
    thought: String,
    action: String,
}

/// Reads a JSON-lines script of `{"thought", "action"}` records.
pub fn load_script(reader: impl BufRead) -> Result<Vec<(String, Action)>, PolicyError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |message: String| PolicyError::Script {
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScriptLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let action = parse_action(&rec.action).map_err(|e| err(e.to_string()))?;
        out.push((rec.thought, action));
    }
    Ok(out)
}
