//! Episode records: the committed steps of one question, its reward, and the
//! behavior policy's per-step log-probabilities when it exposed them.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::env::{State, Step};
use crate::policy::PolicyParams;
use crate::reward::{total_reward, RewardBreakdown, RewardError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question_id: String,
    pub steps: Vec<Step>,
    pub final_answer: Option<String>,
    pub reward: RewardBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logps: Option<Vec<f64>>,
}

impl Trajectory {
    /// Scores a finished (or depth-exhausted) episode against `gold`.
    pub fn from_state(
        question_id: &str,
        state: &State,
        gold: &[String],
        logps: Option<Vec<f64>>,
    ) -> Result<Trajectory, RewardError> {
        let reward = total_reward(&state.steps, state.final_answer.as_deref(), gold)?;
        Ok(Trajectory {
            question_id: question_id.to_string(),
            steps: state.steps.clone(),
            final_answer: state.final_answer.clone(),
            reward,
            logps,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// N trajectories for one question, sampled under one parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGroup {
    pub query_id: String,
    pub question: String,
    pub gold: Vec<String>,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    /// Absent for groups sampled from a policy without parameters.
    pub behavior_params: Option<PolicyParams>,
}

/// One line of an exported group file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub question: String,
    pub gold: Vec<String>,
    #[serde(flatten)]
    pub trajectory: Trajectory,
    pub advantage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_params: Option<PolicyParams>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("group file has no trajectories")]
    Empty,
}

/// Writes one record per trajectory with its advantage attached.
pub fn write_group(
    group: &TrajectoryGroup,
    advantages: &[f64],
    mut w: impl Write,
) -> Result<(), TrajectoryIoError> {
    if group.trajectories.is_empty() {
        return Err(TrajectoryIoError::Empty);
    }
    for (t, &adv) in group.trajectories.iter().zip(advantages) {
        let rec = ExportRecord {
            question: group.question.clone(),
            gold: group.gold.clone(),
            trajectory: t.clone(),
            advantage: adv,
            behavior_params: group.behavior_params.clone(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a group file back; returns the group and the stored advantages.
pub fn read_group(r: impl BufRead) -> Result<(TrajectoryGroup, Vec<f64>), TrajectoryIoError> {
    let mut records = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExportRecord =
            serde_json::from_str(&line).map_err(|e| TrajectoryIoError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(rec);
    }
    let first = records.first().ok_or(TrajectoryIoError::Empty)?;
    let mut group = TrajectoryGroup {
        query_id: first.trajectory.question_id.clone(),
        question: first.question.clone(),
        gold: first.gold.clone(),
        trajectories: Vec::new(),
        rewards: Vec::new(),
        behavior_params: first.behavior_params.clone(),
    };
    let mut advantages = Vec::new();
    for rec in records {
        group.rewards.push(rec.trajectory.reward.total);
        group.trajectories.push(rec.trajectory);
        advantages.push(rec.advantage);
    }
    Ok((group, advantages))
}
