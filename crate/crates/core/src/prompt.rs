//! Prompt rendering: the instruction template with the graph definition and
//! question filled in, followed by the Thought/Action/Observation scratchpad.

use std::fmt::Write;

use crate::action::ActionKind;
use crate::env::State;
use crate::graph::GraphSchema;

const INSTRUCTIONS: &str = "\
Solve a question answering task with interleaving Thought, Interaction with Graph, and Feedback from Graph steps.
In the Thought step, you should reason about what additional information is required to answer the question.
In the Interaction step, you can gather feedback from the graph using four available functions:
(1) RetrieveNode[keyword] retrieves the related node from the graph according to the given query keyword.
(2) NodeFeature[Node, feature] returns the detailed attribute information of the specified node regarding the given \"feature\" key.
(3) NodeDegree[Node, neighbor_type] calculates the number of neighbors of the node that match the specified \"neighbor_type\".
(4) NeighbourCheck[Node, neighbor_type] lists all the \"neighbor_type\" neighbors of the given node and returns them.
You may take as many reasoning and interaction steps as necessary until the answer is reached.
Below are several illustrative examples demonstrating the interaction pattern:
";

const EXAMPLE: &str = "\
Example:
Question: How many papers are written by author Nicholas Lydon?
Thought 1: The question is asking for the number of written papers of a specific author (Nicholas Lydon). We need to find the author node in the graph.
Action 1: RetrieveNode[Nicholas Lydon]
Observation 1: The ID of this retrieval target node is 53f438c3dabfaedf43596117.
Thought 2: The question is asking for the number of papers written by Nicholas Lydon. We need to calculate the \"paper\" neighbor degree of this node.
Action 2: NodeDegree[53f438c3dabfaedf43596117, paper]
Observation 2: 2
Thought 3: The number of the paper neighbors is 2.
Action 3: Finish[2]
(END OF EXAMPLES)
";

/// Full prompt for `state`. Byte-deterministic.
pub fn render_scratchpad(state: &State, schema: &GraphSchema) -> String {
    let mut out = String::with_capacity(2048);
    out.push_str(INSTRUCTIONS);
    out.push_str(EXAMPLE);
    let _ = writeln!(out, "\nDefinition of the graph: {}", schema.description);
    let _ = writeln!(out, "\nQuestion: {}", state.query);
    out.push_str(
        "Please answer by providing the node's main feature (e.g., name) rather than the node ID.\n",
    );
    out.push_str(&render_steps(state));
    out
}

/// Only the step lines. `Finish` steps have no observation line.
pub fn render_steps(state: &State) -> String {
    let mut out = String::new();
    for step in &state.steps {
        let i = step.index;
        let _ = writeln!(out, "Thought {i}: {}", step.thought);
        let _ = writeln!(out, "Action {i}: {}", step.action);
        if step.action.kind() != ActionKind::Finish {
            let _ = writeln!(out, "Observation {i}: {}", step.observation);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action;
    use crate::env::{EnvConfig, Environment};
    use crate::fixtures;
    use crate::index::RetrievalIndex;
    use proptest::prelude::*;

    #[test]
    fn empty_state_fills_both_slots() {
        let g = fixtures::lydon_graph();
        let idx = RetrievalIndex::build(&g);
        let cfg = EnvConfig::default();
        let env = Environment::new(&g, &idx, &cfg).unwrap();
        let s = env.reset("Which venue published X?").unwrap();
        let text = render_scratchpad(&s, g.schema());
        assert!(text.contains(&format!(
            "Definition of the graph: {}\n",
            g.schema().description
        )));
        assert!(text.ends_with(
            "Question: Which venue published X?\nPlease answer by providing the node's main feature (e.g., name) rather than the node ID.\n"
        ));
        assert_eq!(text, render_scratchpad(&s, g.schema()));
    }

    #[test]
    fn worked_example_lines_are_reproduced() {
        let g = fixtures::lydon_graph();
        let idx = RetrievalIndex::build(&g);
        let cfg = EnvConfig::default();
        let env = Environment::new(&g, &idx, &cfg).unwrap();
        let mut s = env.reset(fixtures::LYDON_QUESTION).unwrap();
        for (thought, action) in fixtures::lydon_script() {
            s = env.step(&s, &thought, &action).unwrap();
        }
        let block = EXAMPLE
            .strip_prefix(
                "Example:\nQuestion: How many papers are written by author Nicholas Lydon?\n",
            )
            .unwrap()
            .strip_suffix("(END OF EXAMPLES)\n")
            .unwrap();
        assert_eq!(render_steps(&s), block);
        assert!(render_scratchpad(&s, g.schema()).ends_with(block));
    }

    fn small_state() -> impl Strategy<Value = Vec<(String, usize, String)>> {
        prop::collection::vec(("[a-z ]{1,6}", 0usize..3, "[a-z0-9]{1,4}"), 0..4)
    }

    proptest! {
        #[test]
        fn rendering_is_injective(a in small_state(), b in small_state()) {
            let build = |spec: &[(String, usize, String)]| {
                let mut s = State {
                    query: "q".into(), steps: vec![], visited_nodes: vec![],
                    current_node: None, terminal: false, final_answer: None,
                };
                for (i, (thought, kind, arg)) in spec.iter().enumerate() {
                    let action = match kind {
                        0 => Action::retrieve(arg),
                        1 => Action::degree(arg, "paper"),
                        _ => Action::feature(arg, "name"),
                    };
                    s.steps.push(crate::env::Step {
                        index: i + 1,
                        thought: thought.clone(),
                        action,
                        observation: format!("obs {arg}"),
                        env_error: None,
                        retrieval: vec![],
                    });
                }
                s
            };
            let (sa, sb) = (build(&a), build(&b));
            let schema = fixtures::lydon_graph().schema().clone();
            if sa != sb {
                prop_assert_ne!(render_scratchpad(&sa, &schema), render_scratchpad(&sb, &schema));
            }
        }
    }
}
