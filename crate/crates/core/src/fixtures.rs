//! Bundled worked-example data: a small academic graph containing the
//! author "Nicholas Lydon", the question about their paper count, and the
//! three-step script that answers it.

use crate::action::Action;
use crate::graph::Graph;

pub const LYDON_GRAPH_JSONL: &str = include_str!("../fixtures/lydon_graph.jsonl");
pub const LYDON_DATASET_JSONL: &str = include_str!("../fixtures/lydon_dataset.jsonl");
pub const LYDON_SCRIPT_JSONL: &str = include_str!("../fixtures/lydon_script.jsonl");

pub const LYDON_ID: &str = "53f438c3dabfaedf43596117";
pub const LYDON_QUESTION: &str = "How many papers are written by author Nicholas Lydon?";

pub fn lydon_graph() -> Graph {
    Graph::from_reader(LYDON_GRAPH_JSONL.as_bytes(), "lydon_graph.jsonl")
        .expect("bundled fixture graph is valid")
}

pub fn lydon_script() -> Vec<(String, Action)> {
    crate::policy::load_script(LYDON_SCRIPT_JSONL.as_bytes()).expect("bundled script is valid")
}
