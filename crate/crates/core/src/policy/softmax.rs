//! Log-linear policy over the candidate menu:
//! `p(a | s) = exp(w·f(s,a)/T) / Σ_b exp(w·f(s,b)/T)`.

use serde::{Deserialize, Serialize};

use super::{sample_index, ActionProposal, Policy, PolicyError, SearchRng};
use crate::action::Action;
use crate::env::{Environment, State};
use crate::text::{content_tokens, overlap};

pub const FEATURE_DIM: usize = 9;

/// `[kind one-hot (5), query/argument overlap, depth fraction, visited, bias]`
pub type FeatureVector = [f64; FEATURE_DIM];

const OVERLAP: usize = 5;
const DEPTH: usize = 6;
const VISITED: usize = 7;
const BIAS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub weights: Vec<f64>,
    pub temperature: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams::zeros()
    }
}

impl PolicyParams {
    /// The uniform policy.
    pub fn zeros() -> Self {
        PolicyParams {
            weights: vec![0.0; FEATURE_DIM],
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.weights.len() != FEATURE_DIM {
            return Err(PolicyError::InvalidParams(format!(
                "expected {FEATURE_DIM} weights, got {}",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(PolicyError::InvalidParams("non-finite weight".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(PolicyError::InvalidParams(
                "temperature must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn logit(&self, f: &FeatureVector) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() / self.temperature
    }

    /// Softmax over `features` with max-subtraction; returns (probs, log-probs).
    pub fn softmax(&self, features: &[FeatureVector]) -> (Vec<f64>, Vec<f64>) {
        let logits: Vec<f64> = features.iter().map(|f| self.logit(f)).collect();
        softmax_logits(&logits)
    }
}

pub(crate) fn softmax_logits(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|z| z - max).collect();
    let log_z = shifted.iter().map(|z| z.exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = shifted.iter().map(|z| z - log_z).collect();
    let probs = log_probs.iter().map(|l| l.exp()).collect();
    (probs, log_probs)
}

/// Deterministic features of taking `action` at `state`; `referenced` is the
/// node the action is about, if any.
pub fn featurize(
    state: &State,
    action: &Action,
    referenced: Option<&str>,
    max_depth: usize,
) -> FeatureVector {
    let mut f = [0.0; FEATURE_DIM];
    f[action.kind().index()] = 1.0;
    let query = content_tokens(&state.query);
    let args = content_tokens(&action.args().join(" "));
    f[OVERLAP] = overlap(&query, &args);
    f[DEPTH] = state.depth() as f64 / max_depth.max(1) as f64;
    f[VISITED] = match referenced {
        Some(id) if state.has_visited(id) => 1.0,
        _ => 0.0,
    };
    f[BIAS] = 1.0;
    f
}

/// [`featurize`] with the referenced node resolved through `env`.
pub fn featurize_in(
    env: &Environment<'_>,
    state: &State,
    action: &Action,
    max_depth: usize,
) -> FeatureVector {
    let referenced = env.referenced_node(state, action);
    featurize(
        state,
        action,
        referenced.as_ref().map(|n| n.as_str()),
        max_depth,
    )
}

#[derive(Debug, Clone, Default)]
pub struct SoftmaxPolicy {
    pub params: PolicyParams,
}

impl SoftmaxPolicy {
    pub fn new(params: PolicyParams) -> Result<Self, PolicyError> {
        params.validate()?;
        Ok(SoftmaxPolicy { params })
    }

    /// Candidate menu with features, in menu order.
    pub fn candidates(
        env: &Environment<'_>,
        state: &State,
    ) -> Result<(Vec<Action>, Vec<FeatureVector>), PolicyError> {
        let actions = env.candidate_actions(state)?;
        if actions.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let max_depth = env.config().max_depth;
        let features = actions
            .iter()
            .map(|a| featurize_in(env, state, a, max_depth))
            .collect();
        Ok((actions, features))
    }

    /// Probability of every candidate, in menu order. Sums to 1.
    pub fn distribution(
        &self,
        env: &Environment<'_>,
        state: &State,
    ) -> Result<Vec<(Action, f64)>, PolicyError> {
        let (actions, features) = Self::candidates(env, state)?;
        let (probs, _) = self.params.softmax(&features);
        Ok(actions.into_iter().zip(probs).collect())
    }

    pub fn log_prob(
        &self,
        env: &Environment<'_>,
        state: &State,
        action: &Action,
    ) -> Result<f64, PolicyError> {
        let (actions, features) = Self::candidates(env, state)?;
        let i = actions
            .iter()
            .position(|a| a == action)
            .ok_or_else(|| PolicyError::NotACandidate(action.to_string()))?;
        let (_, log_probs) = self.params.softmax(&features);
        Ok(log_probs[i])
    }
}

impl Policy for SoftmaxPolicy {
    /// Candidates sorted by descending probability; ties keep menu order.
    fn propose(
        &self,
        env: &Environment<'_>,
        state: &State,
    ) -> Result<Vec<ActionProposal>, PolicyError> {
        let (actions, features) = Self::candidates(env, state)?;
        let (_, log_probs) = self.params.softmax(&features);
        let mut out: Vec<ActionProposal> = actions
            .into_iter()
            .zip(log_probs)
            .map(|(a, lp)| ActionProposal::new(a, Some(lp)))
            .collect();
        out.sort_by(|a, b| b.log_prob.unwrap().total_cmp(&a.log_prob.unwrap()));
        Ok(out)
    }

    fn sample(
        &self,
        env: &Environment<'_>,
        state: &State,
        rng: &mut SearchRng,
    ) -> Result<ActionProposal, PolicyError> {
        let (actions, features) = Self::candidates(env, state)?;
        let (probs, log_probs) = self.params.softmax(&features);
        let i = sample_index(&probs, rng);
        Ok(ActionProposal::new(actions[i].clone(), Some(log_probs[i])))
    }

    fn exposes_probabilities(&self) -> bool {
        true
    }
}
