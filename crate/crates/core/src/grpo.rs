//! Group-relative policy optimization for the softmax-linear policy.
//!
//! For a group of N trajectories with group-normalized advantages `Â_i`:
//!
//! ```text
//! J(θ) = (1/N) Σ_i (1/|τ_i|) Σ_t min(ρ_it·Â_i, clip(ρ_it, 1-ε, 1+ε)·Â_i) - β·KL(π_θ ‖ π_ref)
//! ρ_it = exp(log π_θ(a_it | s_it) - log π_behavior(a_it | s_it))
//! ```
//!
//! KL is the exact categorical divergence over each visited state's candidate
//! menu, averaged over every step-state in the group. Gradients are analytic:
//! `∇ log π(a) = (f(a) - E_π f) / T`.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QaRecord;
use crate::env::{EnvError, Environment};
use crate::mcts::{HeuristicEvaluator, Mcts, MctsConfig, MctsError};
use crate::policy::{FeatureVector, Policy, PolicyError, PolicyParams, SearchRng, SoftmaxPolicy};
use crate::reward::RewardError;
use crate::trajectory::{Trajectory, TrajectoryGroup};

/// Weights beyond this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("a group needs at least 2 trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error("invalid GRPO config: {0}")]
    InvalidConfig(String),
    #[error("non-finite log-probability")]
    NonFinite,
    #[error(
        "group '{0}' has no behavior log-probabilities (sampled from a policy that does not \
         expose them); export it for an external trainer instead of training in-process"
    )]
    MissingLogProbs(String),
    #[error("replaying group '{query_id}' step {step}: {message}")]
    Replay {
        query_id: String,
        step: usize,
        message: String,
    },
    #[error("reference policy assigns zero probability to a reachable action")]
    ZeroReference,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("weights diverged at iteration {iteration} (|w| > {DIVERGENCE_LIMIT})")]
    Divergence {
        iteration: usize,
        last_good: PolicyParams,
        metrics: Vec<IterationMetrics>,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Search(#[from] MctsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub optimizer: Optimizer,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub norm_eps: f64,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            optimizer: Optimizer::Adam,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            learning_rate: 0.05,
            iterations: 200,
            norm_eps: 1e-8,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: &str| Err(GrpoError::InvalidConfig(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be >= 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("kl_beta must be >= 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be >= 0");
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 {
            return bad("norm_eps must be positive");
        }
        Ok(())
    }
}

/// Update rule for the ascent step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// `w ← w + lr·g`
    Sgd,
    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8; `lr` is the step size.
    Adam,
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn direction(&mut self, grad: &[f64]) -> Vec<f64> {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        grad.iter()
            .enumerate()
            .map(|(k, g)| {
                self.m[k] = B1 * self.m[k] + (1.0 - B1) * g;
                self.v[k] = B2 * self.v[k] + (1.0 - B2) * g * g;
                (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + 1e-8)
            })
            .collect()
    }
}

/// `(r_i - mean) / std` with the population std; all zeros when the std is
/// below `norm_eps`.
pub fn advantages(rewards: &[f64], norm_eps: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::TooFewTrajectories(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < norm_eps {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

pub fn importance_ratio(logp_new: f64, logp_old: f64) -> Result<f64, GrpoError> {
    if !(logp_new.is_finite() && logp_old.is_finite()) {
        return Err(GrpoError::NonFinite);
    }
    Ok((logp_new - logp_old).exp())
}

/// One decision: the candidate features at the state, which one was taken,
/// and the behavior policy's log-probability for it.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStep {
    pub features: Vec<FeatureVector>,
    pub chosen: usize,
    pub behavior_logp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTrajectory {
    pub steps: Vec<PreparedStep>,
    pub advantage: f64,
}

/// A group reduced to what the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGroup {
    pub trajectories: Vec<PreparedTrajectory>,
}

impl PreparedGroup {
    /// Replays every trajectory through `env` to recover candidate menus.
    pub fn from_group(
        group: &TrajectoryGroup,
        env: &Environment<'_>,
        norm_eps: f64,
    ) -> Result<PreparedGroup, GrpoError> {
        let adv = advantages(&group.rewards, norm_eps)?;
        let max_depth = env.config().max_depth;
        let mut trajectories = Vec::new();
        for (t, a) in group.trajectories.iter().zip(adv) {
            let logps = t
                .logps
                .as_ref()
                .ok_or_else(|| GrpoError::MissingLogProbs(group.query_id.clone()))?;
            if logps.len() != t.steps.len() {
                return Err(GrpoError::MissingLogProbs(group.query_id.clone()));
            }
            let replay = |step: usize, message: String| GrpoError::Replay {
                query_id: group.query_id.clone(),
                step,
                message,
            };
            let mut state = env.reset(&group.question)?;
            let mut steps = Vec::new();
            for (i, (step, &lp)) in t.steps.iter().zip(logps).enumerate() {
                let menu = env.candidate_actions(&state)?;
                let chosen = menu.iter().position(|c| *c == step.action).ok_or_else(|| {
                    replay(i + 1, format!("'{}' is not a candidate", step.action))
                })?;
                steps.push(PreparedStep {
                    features: menu
                        .iter()
                        .map(|c| crate::policy::featurize_in(env, &state, c, max_depth))
                        .collect(),
                    chosen,
                    behavior_logp: lp,
                });
                state = env.step(&state, &step.thought, &step.action)?;
                if state.steps[i].observation != step.observation {
                    return Err(replay(i + 1, "observation differs from the record".into()));
                }
            }
            trajectories.push(PreparedTrajectory {
                steps,
                advantage: a,
            });
        }
        Ok(PreparedGroup { trajectories })
    }

    pub fn step_states(&self) -> impl Iterator<Item = &PreparedStep> {
        self.trajectories.iter().flat_map(|t| t.steps.iter())
    }
}

/// Log-probabilities over a candidate menu.
fn log_softmax(params: &PolicyParams, features: &[FeatureVector]) -> Vec<f64> {
    params.softmax(features).1
}

/// `(f(a) - E_π f) / T` for every candidate `a`.
fn score_functions(
    params: &PolicyParams,
    features: &[FeatureVector],
    probs: &[f64],
) -> Vec<Vec<f64>> {
    let dim = params.weights.len();
    let mut mean = vec![0.0; dim];
    for (f, p) in features.iter().zip(probs) {
        for k in 0..dim {
            mean[k] += p * f[k];
        }
    }
    features
        .iter()
        .map(|f| {
            (0..dim)
                .map(|k| (f[k] - mean[k]) / params.temperature)
                .collect()
        })
        .collect()
}

/// KL(π_new ‖ π_ref) at one state, and its gradient in the new weights.
fn state_kl(
    p_new: &PolicyParams,
    p_ref: &PolicyParams,
    features: &[FeatureVector],
) -> Result<(f64, Vec<f64>), GrpoError> {
    let lp = log_softmax(p_new, features);
    let lr = log_softmax(p_ref, features);
    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let scores = score_functions(p_new, features, &probs);
    let mut kl = 0.0;
    let mut grad = vec![0.0; p_new.weights.len()];
    for a in 0..features.len() {
        if probs[a] == 0.0 {
            continue;
        }
        if lr[a] == f64::NEG_INFINITY {
            return Err(GrpoError::ZeroReference);
        }
        let d = lp[a] - lr[a];
        kl += probs[a] * d;
        for (g, s) in grad.iter_mut().zip(&scores[a]) {
            *g += probs[a] * d * s;
        }
    }
    Ok((kl, grad))
}

/// Mean exact KL over a set of candidate menus.
pub fn kl_divergence(
    p_new: &PolicyParams,
    p_ref: &PolicyParams,
    menus: &[&[FeatureVector]],
) -> Result<f64, GrpoError> {
    if menus.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for m in menus {
        total += state_kl(p_new, p_ref, m)?.0;
    }
    Ok(total / menus.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub objective: f64,
    pub kl: f64,
    pub gradient: Vec<f64>,
}

/// Objective, mean KL and the exact gradient in one pass. At a clip kink
/// (`ρ·Â == clip(ρ)·Â`) the unclipped branch supplies the gradient.
pub fn evaluate(
    group: &PreparedGroup,
    p_new: &PolicyParams,
    p_ref: &PolicyParams,
    cfg: &GrpoConfig,
) -> Result<ObjectiveValue, GrpoError> {
    let dim = p_new.weights.len();
    let n = group.trajectories.len();
    if n < 2 {
        return Err(GrpoError::TooFewTrajectories(n));
    }
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let mut surrogate = 0.0;
    let mut grad = vec![0.0; dim];
    for t in &group.trajectories {
        if t.steps.is_empty() {
            continue;
        }
        let scale = 1.0 / (n as f64 * t.steps.len() as f64);
        let adv = t.advantage;
        for step in &t.steps {
            let lp = log_softmax(p_new, &step.features);
            let rho = importance_ratio(lp[step.chosen], step.behavior_logp)?;
            let unclipped = rho * adv;
            let clipped = rho.clamp(lo, hi) * adv;
            surrogate += scale * unclipped.min(clipped);
            if unclipped <= clipped && adv != 0.0 {
                let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
                let s = &score_functions(p_new, &step.features, &probs)[step.chosen];
                for k in 0..dim {
                    grad[k] += scale * adv * rho * s[k];
                }
            }
        }
    }
    let states: Vec<&PreparedStep> = group.step_states().collect();
    let mut kl = 0.0;
    if !states.is_empty() {
        let m = states.len() as f64;
        for s in &states {
            let (k, g) = state_kl(p_new, p_ref, &s.features)?;
            kl += k / m;
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc -= cfg.kl_beta * gi / m;
            }
        }
    }
    Ok(ObjectiveValue {
        objective: surrogate - cfg.kl_beta * kl,
        kl,
        gradient: grad,
    })
}

pub fn grpo_objective(
    group: &PreparedGroup,
    p_new: &PolicyParams,
    p_ref: &PolicyParams,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    Ok(evaluate(group, p_new, p_ref, cfg)?.objective)
}

pub fn grpo_gradient(
    group: &PreparedGroup,
    p_new: &PolicyParams,
    p_ref: &PolicyParams,
    cfg: &GrpoConfig,
) -> Result<Vec<f64>, GrpoError> {
    Ok(evaluate(group, p_new, p_ref, cfg)?.gradient)
}

/// How group trajectories are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum CollectMode {
    /// Independent policy rollouts from the initial state.
    Rollout,
    /// Trajectories committed by tree search, each with its own search seed;
    /// log-probabilities are those of the committed actions under the policy.
    Mcts(MctsConfig),
}

/// Samples `n` trajectories for `record` under `params`. Each trajectory gets
/// its own RNG seeded from `rng`, so the group is reproducible and may be
/// collected in parallel.
pub fn collect_group(
    env: &Environment<'_>,
    record: &QaRecord,
    params: &PolicyParams,
    n: usize,
    mode: &CollectMode,
    rng: &mut SearchRng,
) -> Result<TrajectoryGroup, GrpoError> {
    if n < 2 {
        return Err(GrpoError::TooFewTrajectories(n));
    }
    let policy = SoftmaxPolicy::new(params.clone())?;
    let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    let trajectories: Vec<Trajectory> = seeds
        .par_iter()
        .map(|&seed| -> Result<Trajectory, GrpoError> {
            let (state, logps) = match mode {
                CollectMode::Rollout => {
                    let mut rng = SearchRng::seed_from_u64(seed);
                    let mut state = env.reset(&record.question)?;
                    let mut logps = Vec::new();
                    while !state.terminal {
                        let p = policy.sample(env, &state, &mut rng)?;
                        logps.push(p.log_prob.expect("softmax policy exposes log-probs"));
                        state = env.step(&state, &p.thought, &p.action)?;
                    }
                    (state, logps)
                }
                CollectMode::Mcts(mcfg) => {
                    let cfg = MctsConfig {
                        seed,
                        ..mcfg.clone()
                    };
                    let search = Mcts {
                        env,
                        policy: &policy,
                        rollout_policy: &policy,
                        evaluator: &HeuristicEvaluator,
                        cfg: &cfg,
                    };
                    let out = search.search(&record.question)?;
                    let mut state = env.reset(&record.question)?;
                    let mut logps = Vec::new();
                    for step in &out.state.steps {
                        logps.push(policy.log_prob(env, &state, &step.action)?);
                        state = env.step(&state, &step.thought, &step.action)?;
                    }
                    (out.state, logps)
                }
            };
            Ok(Trajectory::from_state(
                &record.id,
                &state,
                &record.answers,
                Some(logps),
            )?)
        })
        .collect::<Result<_, _>>()?;
    Ok(TrajectoryGroup {
        query_id: record.id.clone(),
        question: record.question.clone(),
        gold: record.answers.clone(),
        rewards: trajectories.iter().map(|t| t.reward.total).collect(),
        trajectories,
        behavior_params: Some(params.clone()),
    })
}

/// Rollout collection for any policy. Log-probabilities are recorded only
/// when the policy exposes them; the group never carries behavior params.
pub fn collect_rollouts(
    env: &Environment<'_>,
    record: &QaRecord,
    policy: &dyn Policy,
    n: usize,
    rng: &mut SearchRng,
) -> Result<TrajectoryGroup, GrpoError> {
    if n < 2 {
        return Err(GrpoError::TooFewTrajectories(n));
    }
    let seeds: Vec<u64> = (0..n).map(|_| rng.random()).collect();
    let trajectories: Vec<Trajectory> = seeds
        .par_iter()
        .map(|&seed| -> Result<Trajectory, GrpoError> {
            let mut rng = SearchRng::seed_from_u64(seed);
            let mut state = env.reset(&record.question)?;
            let mut logps = Vec::new();
            while !state.terminal {
                let p = policy.sample(env, &state, &mut rng)?;
                logps.push(p.log_prob);
                state = env.step(&state, &p.thought, &p.action)?;
            }
            let logps = logps.into_iter().collect::<Option<Vec<f64>>>();
            Ok(Trajectory::from_state(
                &record.id,
                &state,
                &record.answers,
                logps,
            )?)
        })
        .collect::<Result<_, _>>()?;
    Ok(TrajectoryGroup {
        query_id: record.id.clone(),
        question: record.question.clone(),
        gold: record.answers.clone(),
        rewards: trajectories.iter().map(|t| t.reward.total).collect(),
        trajectories,
        behavior_params: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_reward: f64,
    pub objective: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub metrics: Vec<IterationMetrics>,
}

/// Gradient ascent: each iteration samples a question, collects a group
/// under the current weights, and takes one step on the objective against
/// the initial weights as reference.
pub fn train(
    dataset: &[QaRecord],
    env: &Environment<'_>,
    cfg: &GrpoConfig,
    init: &PolicyParams,
    mode: &CollectMode,
) -> Result<TrainOutcome, GrpoError> {
    cfg.validate()?;
    init.validate()?;
    if dataset.is_empty() {
        return Err(GrpoError::EmptyDataset);
    }
    let reference = init.clone();
    let mut params = init.clone();
    let mut rng = SearchRng::seed_from_u64(cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut adam = AdamState::new(params.weights.len());
    for iteration in 0..cfg.iterations {
        let record = &dataset[rng.random_range(0..dataset.len())];
        let group = collect_group(env, record, &params, cfg.group_size, mode, &mut rng)?;
        let prepared = PreparedGroup::from_group(&group, env, cfg.norm_eps)?;
        let value = evaluate(&prepared, &params, &reference, cfg)?;
        let last_good = params.clone();
        let step = match cfg.optimizer {
            Optimizer::Sgd => value.gradient.clone(),
            Optimizer::Adam => adam.direction(&value.gradient),
        };
        for (w, d) in params.weights.iter_mut().zip(&step) {
            *w += cfg.learning_rate * d;
        }
        metrics.push(IterationMetrics {
            iteration,
            mean_reward: group.rewards.iter().sum::<f64>() / group.rewards.len() as f64,
            objective: value.objective,
            kl: value.kl,
            grad_norm: value.gradient.iter().map(|g| g * g).sum::<f64>().sqrt(),
        });
        if params
            .weights
            .iter()
            .any(|w| !w.is_finite() || w.abs() > DIVERGENCE_LIMIT)
        {
            return Err(GrpoError::Divergence {
                iteration,
                last_good,
                metrics,
            });
        }
    }
    Ok(TrainOutcome { params, metrics })
}
