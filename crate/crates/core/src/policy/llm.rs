//! Chat-endpoint policy: the scratchpad goes out as the user message, the
//! trailing Thought/Action pair of each completion comes back as a proposal.

use std::sync::Arc;

use super::{ActionProposal, Policy, PolicyError, SearchRng};
use crate::action::{parse_action, Action};
use crate::chat::{ChatClient, ChatRequest};
use crate::env::{Environment, State};
use crate::prompt::render_scratchpad;

pub const STOP_SEQUENCE: &str = "Observation";

/// Extracts the last `Thought k:` / `Action k:` pair of a completion. Returns
/// `None` when there is no parseable action line. A missing thought yields an
/// empty thought (which the format reward then penalizes).
pub fn parse_completion(text: &str) -> Option<(String, Action)> {
    let mut thought = String::new();
    let mut action = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(rest) = strip_label(line, "Thought") {
            thought = rest.to_string();
        } else if strip_label(line, "Action").is_some() {
            action = Some(parse_action(line).ok());
        }
    }
    action.flatten().map(|a| (thought, a))
}

/// `Label k: rest` → `rest`.
fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let rest = line.strip_prefix(label)?;
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_digit() || c == ' ');
    rest.strip_prefix(':').map(str::trim)
}

/// Samples `n` completions for `state` and parses each one, preserving sample
/// order. Unparseable samples become flagged empty-answer `Finish` proposals;
/// if every sample is unparseable the call fails with `AllMalformed`.
pub fn propose_llm(
    client: &dyn ChatClient,
    model: &str,
    env: &Environment<'_>,
    state: &State,
    n: usize,
    temperature: f64,
) -> Result<Vec<ActionProposal>, PolicyError> {
    let prompt = render_scratchpad(state, env.graph().schema());
    let mut request = ChatRequest::user(model, prompt, temperature, n.max(1));
    request.stop = vec![STOP_SEQUENCE.to_string()];
    let completions = client.complete(&request)?;
    let proposals: Vec<ActionProposal> = completions
        .iter()
        .map(|c| match parse_completion(c) {
            Some((thought, action)) => ActionProposal {
                thought,
                action,
                log_prob: None,
                malformed: false,
            },
            None => ActionProposal {
                malformed: true,
                ..ActionProposal::give_up()
            },
        })
        .collect();
    if proposals.is_empty() || proposals.iter().all(|p| p.malformed) {
        return Err(PolicyError::AllMalformed);
    }
    Ok(proposals)
}

#[derive(Clone)]
pub struct LlmPolicy {
    pub client: Arc<dyn ChatClient>,
    pub model: String,
    /// Samples per expansion request.
    pub n: usize,
    pub temperature: f64,
}

impl LlmPolicy {
    fn request(
        &self,
        env: &Environment<'_>,
        state: &State,
        n: usize,
    ) -> Result<Vec<ActionProposal>, PolicyError> {
        match propose_llm(
            self.client.as_ref(),
            &self.model,
            env,
            state,
            n,
            self.temperature,
        ) {
            Err(PolicyError::AllMalformed) => Ok(vec![ActionProposal {
                malformed: true,
                ..ActionProposal::give_up()
            }]),
            other => other,
        }
    }
}

impl Policy for LlmPolicy {
    /// Distinct actions in first-sampled order.
    fn propose(
        &self,
        env: &Environment<'_>,
        state: &State,
    ) -> Result<Vec<ActionProposal>, PolicyError> {
        let mut out: Vec<ActionProposal> = Vec::new();
        for p in self.request(env, state, self.n)? {
            if !out.iter().any(|q| q.action == p.action) {
                out.push(p);
            }
        }
        Ok(out)
    }

    fn sample(
        &self,
        env: &Environment<'_>,
        state: &State,
        _rng: &mut SearchRng,
    ) -> Result<ActionProposal, PolicyError> {
        Ok(self.request(env, state, 1)?.swap_remove(0))
    }
}
