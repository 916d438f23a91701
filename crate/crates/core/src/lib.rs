//! Question answering over text-attributed graphs by a tree-search agent that
//! calls graph functions, with trajectory rewards and group-relative policy
//! optimization for a trainable policy.

pub mod action;
pub mod chat;
pub mod cli;
pub mod dataset;
pub mod env;
pub mod eval;
pub mod fixtures;
pub mod graph;
pub mod grpo;
pub mod index;
pub mod mcts;
pub mod policy;
pub mod prompt;
pub mod reward;
pub mod synth;
pub mod text;
pub mod trajectory;
