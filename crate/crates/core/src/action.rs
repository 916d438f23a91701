//! The agent's action vocabulary and its `Name[arg, arg]` text form.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    RetrieveNode,
    NodeFeature,
    NeighbourCheck,
    NodeDegree,
    Finish,
}

impl ActionKind {
    pub const ALL: [ActionKind; 5] = [
        ActionKind::RetrieveNode,
        ActionKind::NodeFeature,
        ActionKind::NeighbourCheck,
        ActionKind::NodeDegree,
        ActionKind::Finish,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::RetrieveNode => "RetrieveNode",
            ActionKind::NodeFeature => "NodeFeature",
            ActionKind::NeighbourCheck => "NeighbourCheck",
            ActionKind::NodeDegree => "NodeDegree",
            ActionKind::Finish => "Finish",
        }
    }

    /// Accepts both the British and American spelling of `NeighbourCheck`.
    pub fn from_name(name: &str) -> Option<ActionKind> {
        Some(match name {
            "RetrieveNode" => ActionKind::RetrieveNode,
            "NodeFeature" => ActionKind::NodeFeature,
            "NeighbourCheck" | "NeighborCheck" => ActionKind::NeighbourCheck,
            "NodeDegree" => ActionKind::NodeDegree,
            "Finish" => ActionKind::Finish,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            ActionKind::RetrieveNode | ActionKind::Finish => 1,
            _ => 2,
        }
    }

    /// Position in the one-hot kind encoding.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_graph_function(self) -> bool {
        self != ActionKind::Finish
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("{kind:?} takes {expected} argument(s), got {found}")]
    Arity {
        kind: ActionKind,
        expected: usize,
        found: usize,
    },
    #[error("unbalanced brackets in '{0}'")]
    UnbalancedBrackets(String),
    #[error("empty argument in '{0}'")]
    EmptyArgument(String),
}

/// One call to a graph function, or the terminal `Finish[answer]`.
///
/// Arguments are stored trimmed. `Finish` is the only kind that may carry an
/// empty argument; such an action is representable (it is what a policy emits
/// when it gives up or produces garbage) but never [`valid`](Action::validate).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action {
    kind: ActionKind,
    args: Vec<String>,
}

impl Action {
    pub fn new(kind: ActionKind, args: Vec<String>) -> Result<Action, ParseError> {
        let args: Vec<String> = args.into_iter().map(|a| a.trim().to_string()).collect();
        let action = Action { kind, args };
        action.validate()?;
        Ok(action)
    }

    pub fn retrieve(keyword: &str) -> Action {
        Action::unchecked(ActionKind::RetrieveNode, &[keyword])
    }

    pub fn feature(node: &str, key: &str) -> Action {
        Action::unchecked(ActionKind::NodeFeature, &[node, key])
    }

    pub fn neighbours(node: &str, edge_type: &str) -> Action {
        Action::unchecked(ActionKind::NeighbourCheck, &[node, edge_type])
    }

    pub fn degree(node: &str, edge_type: &str) -> Action {
        Action::unchecked(ActionKind::NodeDegree, &[node, edge_type])
    }

    pub fn finish(answer: &str) -> Action {
        Action::unchecked(ActionKind::Finish, &[answer])
    }

    fn unchecked(kind: ActionKind, args: &[&str]) -> Action {
        Action {
            kind,
            args: args.iter().map(|a| a.trim().to_string()).collect(),
        }
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn args(&self) -> &[String] {
        &self.args
    }

    pub fn arg(&self, i: usize) -> &str {
        self.args.get(i).map(String::as_str).unwrap_or("")
    }

    /// Arity matches the kind and every argument is non-empty.
    pub fn validate(&self) -> Result<(), ParseError> {
        if self.args.len() != self.kind.arity() {
            return Err(ParseError::Arity {
                kind: self.kind,
                expected: self.kind.arity(),
                found: self.args.len(),
            });
        }
        if self.args.iter().any(|a| a.is_empty()) {
            return Err(ParseError::EmptyArgument(self.to_string()));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.kind.name(), self.args.join(", "))
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        parse_action(&text).map_err(serde::de::Error::custom)
    }
}

/// Parses `Name[arg]` or `Name[arg1, arg2]`, optionally prefixed by
/// `Action k:`. Single-argument kinds keep commas and nested brackets inside
/// their argument verbatim. `Finish[]` parses to an empty-answer `Finish`.
pub fn parse_action(text: &str) -> Result<Action, ParseError> {
    let s = strip_action_prefix(text.trim());
    let Some(open) = s.find('[') else {
        let name = s.trim();
        return Err(
            if s.contains(']') || ActionKind::from_name(name).is_some() {
                ParseError::UnbalancedBrackets(s.to_string())
            } else {
                ParseError::UnknownFunction(name.to_string())
            },
        );
    };
    let name = s[..open].trim();
    let kind =
        ActionKind::from_name(name).ok_or_else(|| ParseError::UnknownFunction(name.to_string()))?;
    if !s.ends_with(']') {
        return Err(ParseError::UnbalancedBrackets(s.to_string()));
    }
    let inner = &s[open + 1..s.len() - 1];
    let mut depth = 0i32;
    for c in inner.chars() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            _ => {}
        }
        if depth < 0 {
            return Err(ParseError::UnbalancedBrackets(s.to_string()));
        }
    }
    if depth != 0 {
        return Err(ParseError::UnbalancedBrackets(s.to_string()));
    }
    let args: Vec<String> = if kind.arity() == 1 {
        vec![inner.trim().to_string()]
    } else {
        inner.split(',').map(|a| a.trim().to_string()).collect()
    };
    if args.len() != kind.arity() {
        return Err(ParseError::Arity {
            kind,
            expected: kind.arity(),
            found: args.len(),
        });
    }
    if kind != ActionKind::Finish && args.iter().any(String::is_empty) {
        return Err(ParseError::EmptyArgument(s.to_string()));
    }
    Ok(Action { kind, args })
}

fn strip_action_prefix(s: &str) -> &str {
    let Some(rest) = s.strip_prefix("Action") else {
        return s;
    };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_digit() || c == ' ');
    match rest.strip_prefix(':') {
        Some(r) => r.trim_start(),
        None => s,
    }
}
