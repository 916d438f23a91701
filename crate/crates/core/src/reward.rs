//! Trajectory-level reward: a format term for well-formed steps plus a
//! reasoning term for graph use and answer correctness, clipped to [-1, 3].
//!
//! Attainable values are narrower than the clip: format is one of
//! {0, 0.5, 1}, reasoning one of {-0.5, 0, 0.5, 1, 1.5}, so the total always
//! lies in [-0.5, 2.5].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Step;

pub const FORMAT_PER_STEP: f64 = 0.5;
pub const FORMAT_CAP: f64 = 1.0;
pub const VALID_OPERATION_BONUS: f64 = 0.5;
pub const CORRECT_ANSWER_BONUS: f64 = 1.0;
pub const WRONG_ANSWER_PENALTY: f64 = 0.5;
pub const TOTAL_MIN: f64 = -1.0;
pub const TOTAL_MAX: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("gold answer list is empty")]
    EmptyGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub reasoning: f64,
    pub total: f64,
}

/// Case-folds, trims, collapses inner whitespace and strips punctuation at
/// both ends. Idempotent.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped = lowered.trim_matches(|c: char| c.is_whitespace() || is_punct(c));
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

pub fn answer_matches(answer: &str, gold: &[String]) -> bool {
    let norm = normalize_answer(answer);
    !norm.is_empty() && gold.iter().any(|g| normalize_answer(g) == norm)
}

/// Non-empty thought, a valid action, a non-empty observation, and no
/// environment error.
pub fn is_well_formed(step: &Step) -> bool {
    !step.thought.trim().is_empty()
        && step.action.is_valid()
        && !step.observation.trim().is_empty()
        && step.env_error.is_none()
}

pub fn format_reward(steps: &[Step]) -> f64 {
    let count = steps.iter().filter(|s| is_well_formed(s)).count();
    (FORMAT_PER_STEP * count as f64).min(FORMAT_CAP)
}

/// +0.5 if any graph function ran without error, +1 for a final answer that
/// matches a gold alias, -0.5 for a final answer that matches none. An
/// episode that ends without a final answer gets neither answer term.
pub fn reasoning_reward(
    steps: &[Step],
    final_answer: Option<&str>,
    gold: &[String],
) -> Result<f64, RewardError> {
    if gold.is_empty() {
        return Err(RewardError::EmptyGold);
    }
    let valid_op = steps
        .iter()
        .any(|s| s.action.kind().is_graph_function() && s.env_error.is_none());
    let mut r = if valid_op { VALID_OPERATION_BONUS } else { 0.0 };
    if let Some(answer) = final_answer {
        if answer_matches(answer, gold) {
            r += CORRECT_ANSWER_BONUS;
        } else {
            r -= WRONG_ANSWER_PENALTY;
        }
    }
    Ok(r)
}

pub fn total_reward(
    steps: &[Step],
    final_answer: Option<&str>,
    gold: &[String],
) -> Result<RewardBreakdown, RewardError> {
    let format = format_reward(steps);
    let reasoning = reasoning_reward(steps, final_answer, gold)?;
    Ok(RewardBreakdown {
        format,
        reasoning,
        total: (format + reasoning).clamp(TOTAL_MIN, TOTAL_MAX),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action;
    use crate::env::EnvErrorTag;
    use proptest::prelude::*;

    fn step(thought: &str, action: Action, obs: &str, err: Option<EnvErrorTag>) -> Step {
        Step {
            index: 1,
            thought: thought.into(),
            action,
            observation: obs.into(),
            env_error: err,
            retrieval: vec![],
        }
    }

    fn ok_step() -> Step {
        step(
            "We need the paper degree.",
            Action::degree("53f438c3dabfaedf43596117", "paper"),
            "2",
            None,
        )
    }

    fn gold() -> Vec<String> {
        vec!["2".to_string()]
    }

    #[test]
    fn well_formedness() {
        assert!(is_well_formed(&ok_step()));
        assert!(!is_well_formed(&step(
            "",
            Action::degree("a", "paper"),
            "2",
            None
        )));
        assert!(!is_well_formed(&step(
            "t",
            Action::degree("x9", "paper"),
            "Error: unknown node id 'x9'.",
            Some(EnvErrorTag::UnknownNode)
        )));
        assert!(!is_well_formed(&step(
            "t",
            Action::finish(""),
            "Episode finished.",
            None
        )));
    }

    #[test]
    fn format_reward_caps_at_one() {
        let s = ok_step();
        assert_eq!(format_reward(std::slice::from_ref(&s)), 0.5);
        assert_eq!(format_reward(&[s.clone(), s.clone()]), 1.0);
        assert_eq!(format_reward(&[s.clone(), s.clone(), s]), 1.0);
        assert_eq!(format_reward(&[]), 0.0);
    }

    #[test]
    fn reasoning_reward_cases() {
        let s = ok_step();
        assert_eq!(
            reasoning_reward(std::slice::from_ref(&s), Some("2"), &gold()).unwrap(),
            1.5
        );
        assert_eq!(reasoning_reward(&[s], Some("3"), &gold()).unwrap(), 0.0);
        let bad = step(
            "t",
            Action::degree("x9", "p"),
            "Error: x.",
            Some(EnvErrorTag::UnknownNode),
        );
        assert_eq!(reasoning_reward(&[bad], None, &gold()).unwrap(), 0.0);
        assert_eq!(reasoning_reward(&[], Some(""), &gold()).unwrap(), -0.5);
        assert_eq!(
            reasoning_reward(&[], None, &[]),
            Err(RewardError::EmptyGold)
        );
    }

    #[test]
    fn totals() {
        let s = ok_step();
        let fin = step("done", Action::finish("2"), "Episode finished.", None);
        let r = total_reward(&[s.clone(), fin], Some("2"), &gold()).unwrap();
        assert_eq!((r.format, r.reasoning, r.total), (1.0, 1.5, 2.5));
        let r = total_reward(&[], Some("7"), &gold()).unwrap();
        assert_eq!((r.format, r.reasoning, r.total), (0.0, -0.5, -0.5));
        let r = total_reward(std::slice::from_ref(&s), Some("9"), &gold()).unwrap();
        assert_eq!((r.format, r.reasoning, r.total), (0.5, 0.0, 0.5));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer(" 2."), "2");
        assert_eq!(normalize_answer("Nicholas  LYDON"), "nicholas lydon");
        assert_eq!(normalize_answer("\"Smith, J.\""), "smith, j");
        assert!(answer_matches(
            "nicholas lydon!",
            &["Nicholas Lydon".into()]
        ));
        assert!(!answer_matches("", &["".into()]));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,30}") {
            let once = normalize_answer(&s);
            prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn appending_malformed_step_never_increases_format(n in 0usize..5) {
            let mut steps = vec![ok_step(); n];
            let before = format_reward(&steps);
            steps.push(step("", Action::finish(""), "", None));
            prop_assert!(format_reward(&steps) <= before);
        }
    }
}
