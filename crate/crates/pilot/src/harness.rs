//! Scripted backends with a known fault layout, for checking that the
//! evaluation harness counts exactly what it should.

use anyhow::{bail, Context, Result};
use pilot_core::dataset::{to_eval_cases, Category, TcddSample};
use pilot_core::llm::{scripted_program, BackendConfig, Matcher, ScriptStep};
use pilot_core::parser::ActionInput;
use pilot_core::tools::TOOL_NAMES;

/// How the scripted model answers one case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Answer {
    Correct,
    WrongTool,
    MissingParameter,
}

/// Builds a scripted backend answering each single-turn sample as `layout`
/// says. Faulty answers repeat, so error feedback never rescues them.
pub fn fault_backend(samples: &[TcddSample], layout: &[Answer]) -> Result<BackendConfig> {
    if samples.len() != layout.len() {
        bail!("{} samples but {} answers", samples.len(), layout.len());
    }
    let cases = to_eval_cases(samples, Category::Simple).context("harness cases must be simple samples")?;
    let mut steps = vec![ScriptStep::new(Matcher::Contains("\"status\":\"ok\"".into()), "Final Answer: done.").repeating()];
    for (case, answer) in cases.iter().zip(layout) {
        let turn = &case.turns[0];
        let matcher = Matcher::Contains(turn.user_text.clone());
        let step = match answer {
            Answer::Correct => ScriptStep::new(matcher, turn.expected.render()),
            Answer::WrongTool => ScriptStep::new(matcher, wrong_tool(&turn.expected).render()).repeating(),
            Answer::MissingParameter => {
                let required = case.registry.get(&turn.expected.tool).map(|s| s.required.clone()).unwrap_or_default();
                let mut action = turn.expected.clone();
                let Some(drop) = required.first() else { bail!("{} has no required parameter", action.tool) };
                action.arguments.shift_remove(drop);
                ScriptStep::new(matcher, action.render()).repeating()
            }
        };
        steps.push(step);
    }
    Ok(scripted_program(steps))
}

fn wrong_tool(expected: &ActionInput) -> ActionInput {
    let other = TOOL_NAMES.iter().find(|t| **t != expected.tool).expect("several tools");
    ActionInput { tool: other.to_string(), arguments: expected.arguments.clone() }
}

/// The shipped layout: two wrong-tool and one missing-parameter answer in
/// ten cases.
pub const DEFAULT_LAYOUT: [Answer; 10] = [
    Answer::Correct,
    Answer::WrongTool,
    Answer::Correct,
    Answer::Correct,
    Answer::MissingParameter,
    Answer::Correct,
    Answer::Correct,
    Answer::WrongTool,
    Answer::Correct,
    Answer::Correct,
];

pub fn to_toml(config: &BackendConfig) -> Result<String> {
    #[derive(serde::Serialize)]
    struct File<'a> {
        backend: &'a BackendConfig,
    }
    Ok(toml::to_string(&File { backend: config })?)
}
