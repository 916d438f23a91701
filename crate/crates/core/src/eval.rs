//! Benchmark runner: ROUGE-L and exact-match scoring over a dataset for one
//! of three agents (tree search, greedy argmax, scripted replay).

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::Action;
use crate::chat::ChatError;
use crate::dataset::QaRecord;
use crate::env::{EnvConfig, Environment, State};
use crate::mcts::{Evaluator, Mcts, MctsConfig};
use crate::policy::{templated_thought, Policy, ScriptedPolicy};
use crate::reward::{answer_matches, normalize_answer, total_reward};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("report aggregates do not match its records: {0}")]
    Inconsistent(String),
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Length of the longest common subsequence.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_tokens(text: &str) -> Vec<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// ROUGE-L F1 over normalized whitespace tokens.
pub fn rouge_l(prediction: &str, reference: &str) -> f64 {
    let p = rouge_tokens(prediction);
    let r = rouge_tokens(reference);
    let lcs = lcs_length(&p, &r);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / p.len() as f64;
    let recall = lcs as f64 / r.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best ROUGE-L over the accepted aliases.
pub fn rouge_l_max(prediction: &str, gold: &[String]) -> f64 {
    gold.iter()
        .map(|g| rouge_l(prediction, g))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Mcts,
    Greedy,
    Scripted,
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AgentKind::Mcts => "mcts",
            AgentKind::Greedy => "greedy",
            AgentKind::Scripted => "scripted",
        })
    }
}

pub enum Agent<'a> {
    Mcts {
        policy: &'a dyn Policy,
        rollout_policy: &'a dyn Policy,
        evaluator: &'a dyn Evaluator,
    },
    /// The policy's top proposal at every step, no search.
    Greedy { policy: &'a dyn Policy },
    /// A fixed script for every question, or each record's gold path when
    /// `None`.
    Scripted {
        script: Option<Vec<(String, Action)>>,
    },
}

impl Agent<'_> {
    pub fn kind(&self) -> AgentKind {
        match self {
            Agent::Mcts { .. } => AgentKind::Mcts,
            Agent::Greedy { .. } => AgentKind::Greedy,
            Agent::Scripted { .. } => AgentKind::Scripted,
        }
    }
}

/// Everything that shapes a run; hashed into the report fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub env: EnvConfig,
    pub mcts: MctsConfig,
    pub seed: u64,
}

impl EvalConfig {
    pub fn fingerprint(&self, agent: AgentKind) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            agent: AgentKind,
            config: &'a EvalConfig,
        }
        let bytes = serde_json::to_vec(&Keyed {
            agent,
            config: self,
        })
        .expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Finish,
    DepthExhausted,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub prediction: String,
    pub gold: Vec<String>,
    pub rouge_l: f64,
    pub exact_match: bool,
    pub steps_used: usize,
    pub terminal_reason: TerminalReason,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub questions: usize,
    pub mean_rouge_l: f64,
    pub exact_match_rate: f64,
    pub mean_steps: f64,
    pub mean_reward: f64,
}

impl Aggregates {
    pub fn from_records(records: &[QuestionRecord]) -> Aggregates {
        let n = records.len();
        let mean = |f: &dyn Fn(&QuestionRecord) -> f64| {
            if n == 0 {
                0.0
            } else {
                records.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Aggregates {
            questions: n,
            mean_rouge_l: mean(&|r| r.rouge_l),
            exact_match_rate: mean(&|r| if r.exact_match { 1.0 } else { 0.0 }),
            mean_steps: mean(&|r| r.steps_used as f64),
            mean_reward: mean(&|r| r.reward),
        }
    }

    fn close_to(&self, other: &Aggregates) -> bool {
        let eq = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        self.questions == other.questions
            && eq(self.mean_rouge_l, other.mean_rouge_l)
            && eq(self.exact_match_rate, other.exact_match_rate)
            && eq(self.mean_steps, other.mean_steps)
            && eq(self.mean_reward, other.mean_reward)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: AgentKind,
    pub records: Vec<QuestionRecord>,
    pub aggregates: Aggregates,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn check(&self) -> Result<(), EvalError> {
        let recomputed = Aggregates::from_records(&self.records);
        if !self.aggregates.close_to(&recomputed) {
            return Err(EvalError::Inconsistent(format!(
                "stored {:?}, recomputed {:?}",
                self.aggregates, recomputed
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, EvalError> {
        self.check()?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<EvalReport, EvalError> {
        let report: EvalReport = serde_json::from_str(text)?;
        report.check()?;
        Ok(report)
    }

    /// Plain-text table: one row per question plus a totals row.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>7} {:>5} {:>7}  prediction",
            "id", "EM", "ROUGE-L", "steps", "reward"
        );
        for r in &self.records {
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>7.3} {:>5} {:>7.2}  {}",
                r.id,
                if r.exact_match { "yes" } else { "no" },
                r.rouge_l,
                r.steps_used,
                r.reward,
                r.prediction
            );
        }
        let a = &self.aggregates;
        let _ = writeln!(
            out,
            "{:<24} {:>6.3} {:>7.3} {:>5.1} {:>7.2}  ({} questions, agent {})",
            "mean",
            a.exact_match_rate,
            a.mean_rouge_l,
            a.mean_steps,
            a.mean_reward,
            a.questions,
            self.agent
        );
        out
    }
}

/// Judgement of a prediction against gold by an external grader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

/// Pluggable grader interface; no implementation ships with the crate.
pub trait Judge: Sync {
    fn judge(
        &self,
        question: &str,
        prediction: &str,
        gold: &[String],
    ) -> Result<Verdict, ChatError>;
}

/// Seed for the question at `position`, independent of scheduling.
fn question_seed(seed: u64, position: usize) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(position as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Steps `policy`'s top proposal until the episode ends.
pub fn run_greedy(
    env: &Environment<'_>,
    policy: &dyn Policy,
    query: &str,
) -> Result<State, Box<dyn std::error::Error + Send + Sync>> {
    let mut state = env.reset(query)?;
    while !state.terminal {
        let proposals = policy.propose(env, &state)?;
        let top = proposals
            .into_iter()
            .next()
            .ok_or("policy returned no proposals")?;
        state = env.step(&state, &top.thought, &top.action)?;
    }
    Ok(state)
}

fn gold_script(record: &QaRecord) -> Vec<(String, Action)> {
    record
        .gold_path
        .iter()
        .flatten()
        .map(|a| (templated_thought(a), a.clone()))
        .collect()
}

fn run_one(
    env: &Environment<'_>,
    agent: &Agent<'_>,
    cfg: &EvalConfig,
    record: &QaRecord,
    position: usize,
) -> Result<State, Box<dyn std::error::Error + Send + Sync>> {
    match agent {
        Agent::Mcts {
            policy,
            rollout_policy,
            evaluator,
        } => {
            let mcts_cfg = MctsConfig {
                seed: question_seed(cfg.seed, position),
                ..cfg.mcts.clone()
            };
            let search = Mcts {
                env,
                policy: *policy,
                rollout_policy: *rollout_policy,
                evaluator: *evaluator,
                cfg: &mcts_cfg,
            };
            Ok(search.search(&record.question)?.state)
        }
        Agent::Greedy { policy } => run_greedy(env, *policy, &record.question),
        Agent::Scripted { script } => {
            let policy = ScriptedPolicy::new(match script {
                Some(s) => s.clone(),
                None => gold_script(record),
            });
            run_greedy(env, &policy, &record.question)
        }
    }
}

fn score(record: &QaRecord, outcome: Result<State, String>) -> QuestionRecord {
    let gold = record.answers.clone();
    let (state, error) = match outcome {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e)),
    };
    let prediction = state
        .as_ref()
        .and_then(|s| s.final_answer.clone())
        .unwrap_or_default();
    let steps_used = state.as_ref().map_or(0, |s| s.steps.len());
    let terminal_reason = match &state {
        None => TerminalReason::Error,
        Some(s) if s.final_answer.is_some() => TerminalReason::Finish,
        Some(_) => TerminalReason::DepthExhausted,
    };
    let (reward, error) = match &state {
        Some(s) => match total_reward(&s.steps, s.final_answer.as_deref(), &gold) {
            Ok(r) => (r.total, error),
            Err(e) => (0.0, Some(e.to_string())),
        },
        None => (0.0, error),
    };
    QuestionRecord {
        id: record.id.clone(),
        rouge_l: rouge_l_max(&prediction, &gold),
        exact_match: answer_matches(&prediction, &gold),
        prediction,
        gold,
        steps_used,
        terminal_reason,
        reward,
        error,
    }
}

/// Runs every question through `agent`, in parallel, and reports records
/// ordered by question id. Per-question failures are recorded, not raised.
pub fn run_benchmark(
    dataset: &[QaRecord],
    env: &Environment<'_>,
    agent: &Agent<'_>,
    cfg: &EvalConfig,
) -> EvalReport {
    let mut order: Vec<&QaRecord> = dataset.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let records: Vec<QuestionRecord> = order
        .par_iter()
        .enumerate()
        .map(|(pos, rec)| {
            let outcome = run_one(env, agent, cfg, rec, pos).map_err(|e| e.to_string());
            score(rec, outcome)
        })
        .collect();
    EvalReport {
        agent: agent.kind(),
        aggregates: Aggregates::from_records(&records),
        records,
        config_fingerprint: cfg.fingerprint(agent.kind()),
        seed: cfg.seed,
    }
}
