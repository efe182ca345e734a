//! Feedback-and-focus: reasoning-error detection and the retry prompt.
//!
//! A retry prompt is the concatenation of three sections, in order: the
//! detected errors, the original task verbatim, and a regeneration
//! instruction.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::parser::{Argument, ActionInput, ModelTurn};
use crate::pmp::MemoryPool;
use crate::tools::{conform, validate_arguments, ArgumentFault, ToolRegistry, ToolSchema};
use crate::value::ParameterValue;

/// Version tag of the feedback template, echoed into traces.
pub const FEEDBACK_TEMPLATE_VERSION: &str = "fefo-v1";

/// Retries allowed per user query after the first attempt.
pub const MAX_RETRIES: usize = 3;

const ERROR_HEADER: &str = "Your previous output could not be executed because of the following errors:";
const TASK_LABEL: &str = "Original task: ";
const INSTRUCTION: &str = "Regenerate the output according to the formatting requirements based on the information above. \
Call exactly one tool as JSON {\"name\": <tool name>, \"arguments\": {...}}, use only the parameters the tool declares, \
and pass a stored parameter by writing its memory pool key in parentheses, e.g. \"(key)\", only if that key is listed \
in the memory pool. If the task is already complete, reply with \"Final Answer: <answer>\".";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class")]
pub enum FeFoError {
    UnparseableOutput { reason: String },
    UnknownTool { tool: String, available: Vec<String> },
    MissingRequired { tool: String, name: String },
    UnexpectedParameter { tool: String, name: String },
    TypeMismatch { name: String, expected: String, found: String },
    NonexistentMemoryKey { param: String, key: String, available: Vec<String> },
    InvalidParameterValue { name: String, reason: String },
    ToolExecutionFailed { tool: String, message: String },
}

impl FeFoError {
    pub fn class_name(&self) -> &'static str {
        match self {
            FeFoError::UnparseableOutput { .. } => "UnparseableOutput",
            FeFoError::UnknownTool { .. } => "UnknownTool",
            FeFoError::MissingRequired { .. } => "MissingRequired",
            FeFoError::UnexpectedParameter { .. } => "UnexpectedParameter",
            FeFoError::TypeMismatch { .. } => "TypeMismatch",
            FeFoError::NonexistentMemoryKey { .. } => "NonexistentMemoryKey",
            FeFoError::InvalidParameterValue { .. } => "InvalidParameterValue",
            FeFoError::ToolExecutionFailed { .. } => "ToolExecutionFailed",
        }
    }

    /// Offending fragment and cause, as one line.
    pub fn detail(&self) -> String {
        match self {
            FeFoError::UnparseableOutput { reason } => {
                format!("the output is neither a tool call nor a final answer ({reason})")
            }
            FeFoError::UnknownTool { tool, available } => {
                format!("unknown tool: {tool} (available tools: {})", available.join(", "))
            }
            FeFoError::MissingRequired { tool, name } => {
                format!("missing required parameter: {name} (tool {tool} cannot run without it)")
            }
            FeFoError::UnexpectedParameter { tool, name } => {
                format!("unexpected parameter: {name} (tool {tool} does not declare it)")
            }
            FeFoError::TypeMismatch { name, expected, found } => {
                format!("type mismatch for parameter {name}: expected {expected}, found {found}")
            }
            FeFoError::NonexistentMemoryKey { param, key, available } => format!(
                "nonexistent memory key: ({key}) used for parameter {param} is not in the memory pool (stored keys: [{}])",
                available.join(", ")
            ),
            FeFoError::InvalidParameterValue { name, reason } => {
                format!("invalid value for parameter {name}: {reason}")
            }
            FeFoError::ToolExecutionFailed { tool, message } => {
                format!("tool {tool} failed: {message}")
            }
        }
    }

    fn from_fault(tool: &str, fault: ArgumentFault) -> Self {
        match fault {
            ArgumentFault::MissingRequired { name } => FeFoError::MissingRequired { tool: tool.to_string(), name },
            ArgumentFault::UnexpectedParameter { name } => {
                FeFoError::UnexpectedParameter { tool: tool.to_string(), name }
            }
            ArgumentFault::TypeMismatch { name, expected, found } => {
                FeFoError::TypeMismatch { name, expected: expected.to_string(), found }
            }
            ArgumentFault::InvalidValue { name, reason } => FeFoError::InvalidParameterValue { name, reason },
        }
    }
}

impl fmt::Display for FeFoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.class_name(), self.detail())
    }
}

/// An action that passed every check, with memory references replaced by
/// their pool values and literals coerced to the declared kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedAction {
    pub action: ActionInput,
    pub schema: ToolSchema,
    pub resolved: IndexMap<String, ParameterValue>,
}

/// Checks a model turn. `Ok(None)` is a final answer.
pub fn check(
    turn: &ModelTurn,
    registry: &ToolRegistry,
    pool: &MemoryPool,
) -> Result<Option<CheckedAction>, Vec<FeFoError>> {
    let action = match turn {
        ModelTurn::FinalAnswer(_) => return Ok(None),
        ModelTurn::Unparseable(reason) => {
            return Err(vec![FeFoError::UnparseableOutput { reason: reason.clone() }])
        }
        ModelTurn::Action(a) => a,
    };
    let Some(schema) = registry.get(&action.tool) else {
        return Err(vec![FeFoError::UnknownTool {
            tool: action.tool.clone(),
            available: registry.names().map(str::to_string).collect(),
        }]);
    };

    let mut errors = Vec::new();
    let mut resolved = IndexMap::with_capacity(action.arguments.len());
    let mut dangling = Vec::new();
    for (name, arg) in &action.arguments {
        match arg {
            Argument::Literal(v) => {
                resolved.insert(name.clone(), v.clone());
            }
            Argument::MemoryRef(key) => match pool.resolve(key.as_str()) {
                Ok(v) => {
                    resolved.insert(name.clone(), v.clone());
                }
                Err(_) => {
                    dangling.push(name.clone());
                    errors.push(FeFoError::NonexistentMemoryKey {
                        param: name.clone(),
                        key: key.to_string(),
                        available: pool.list_keys().into_iter().map(String::from).collect(),
                    });
                }
            },
        }
    }
    for fault in validate_arguments(schema, &resolved) {
        if matches!(&fault, ArgumentFault::MissingRequired { name } if dangling.contains(name)) {
            continue;
        }
        errors.push(FeFoError::from_fault(&schema.name, fault));
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    for (name, value) in resolved.iter_mut() {
        let kind = schema.param(name).expect("validated").kind;
        *value = conform(name, kind, value).expect("validated");
    }
    Ok(Some(CheckedAction { action: action.clone(), schema: schema.clone(), resolved }))
}

/// Reasoning errors in `turn`; empty for final answers and executable actions.
pub fn detect(turn: &ModelTurn, registry: &ToolRegistry, pool: &MemoryPool) -> Vec<FeFoError> {
    check(turn, registry, pool).err().unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPrompt {
    pub error_section: String,
    pub task_section: String,
    pub instruction_section: String,
}

impl FeedbackPrompt {
    /// Errors, then the original task, then the instruction.
    pub fn render(&self) -> String {
        format!("{}\n\n{TASK_LABEL}{}\n\n{}", self.error_section, self.task_section, self.instruction_section)
    }
}

/// Builds the retry prompt. `errors` should be non-empty.
pub fn build_feedback(errors: &[FeFoError], original_task: &str) -> FeedbackPrompt {
    debug_assert!(!errors.is_empty());
    let mut error_section = String::from(ERROR_HEADER);
    for (i, e) in errors.iter().enumerate() {
        error_section.push_str(&format!("\n{}. {e}", i + 1));
    }
    FeedbackPrompt {
        error_section,
        task_section: original_task.to_string(),
        instruction_section: INSTRUCTION.to_string(),
    }
}
