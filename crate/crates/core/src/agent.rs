//! The orchestration loop.
//!
//! One query runs: assemble prompt, ask the model, parse, gate through
//! Fe-Fo, resolve memory references, execute, store the result, and repeat
//! until a final answer or a budget runs out.

use std::fmt;
use std::io::Write;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use uuid::Uuid;

use crate::clock::Clock;
use crate::fefo::{self, build_feedback, CheckedAction, FeFoError, FEEDBACK_TEMPLATE_VERSION, MAX_RETRIES};
use crate::llm::{
    assemble_prompt, ChatBackend, ChatMessage, LlmError, PromptMode, MEMORY_POOL_PROMPT, PROMPT_VERSION,
    SYSTEM_PROMPT,
};
use crate::parser::{ActionInput, Argument, ModelTurn, Parser, DEFAULT_FINAL_MARKER};
use crate::pmp::{KeyToken, MemoryPool, SharedPool};
use crate::tools::{execute, result_value, Observation, ToolRegistry};

/// Observations longer than this are shown to the model in PMP mode as a
/// pool reference plus a short summary.
pub const OBSERVATION_INLINE_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub deadline: Duration,
    pub max_steps: usize,
    pub max_retries: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { deadline: Duration::from_secs(120), max_steps: 8, max_retries: MAX_RETRIES }
    }
}

impl Budget {
    /// Same budget with the deadline multiplied by `factor`.
    pub fn scaled(self, factor: f64) -> Self {
        Budget { deadline: self.deadline.mul_f64(factor), ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub pmp: bool,
    pub fefo: bool,
    pub budget: Budget,
    pub final_marker: String,
    /// Prompt-size cap for the inlined-memory mode. `None` leaves it uncut.
    pub context_cap: Option<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            pmp: true,
            fefo: true,
            budget: Budget::default(),
            final_marker: DEFAULT_FINAL_MARKER.to_string(),
            context_cap: None,
        }
    }
}

impl AgentConfig {
    pub fn prompt_mode(&self) -> PromptMode {
        if self.pmp {
            PromptMode::Pmp
        } else {
            PromptMode::Inline { context_cap: self.context_cap }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub pool: SharedPool,
    pub history: Vec<ChatMessage>,
    pub original_task: Option<String>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        Self::with_pool(MemoryPool::new())
    }

    pub fn with_pool(pool: MemoryPool) -> Self {
        Session {
            id: Uuid::new_v4().to_string(),
            pool: SharedPool::new(pool),
            history: Vec::new(),
            original_task: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub raw_output: String,
    pub parsed: ModelTurn,
    pub errors: Vec<FeFoError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_args: Option<IndexMap<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    /// Seconds since the query started.
    pub elapsed: f64,
    /// Total characters of the prompt this step was answered from.
    pub prompt_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Failure {
    QueryTimeout,
    RetryBudgetExhausted { errors: Vec<FeFoError> },
    BackendUnavailable { reason: String },
    StepBudgetExhausted,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::QueryTimeout => f.write_str("query timed out"),
            Failure::RetryBudgetExhausted { errors } => {
                f.write_str("retry budget exhausted")?;
                for e in errors {
                    write!(f, "; {e}")?;
                }
                Ok(())
            }
            Failure::BackendUnavailable { reason } => f.write_str(reason),
            Failure::StepBudgetExhausted => f.write_str("step budget exhausted"),
        }
    }
}

/// Loop stages reported to observers as they happen.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentEvent {
    ModelTurn { raw_output: String, parsed: ModelTurn },
    FefoFeedback { errors: Vec<FeFoError>, prompt: String, retry: usize },
    ToolCall { tool: String, action: ActionInput, resolved_args: IndexMap<String, Value> },
    ToolResult { tool: String, observation: Observation, stored_as: Option<String> },
    PoolChanged { revision: u64, keys: Vec<String> },
    FinalAnswer { text: String },
    Failure { failure: Failure },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub result: Result<String, Failure>,
    pub trace: Vec<StepTrace>,
    pub latency: Duration,
    pub retries: usize,
}

impl QueryOutcome {
    /// The last action the model attempted, whether or not it executed.
    pub fn last_action(&self) -> Option<&ActionInput> {
        self.trace.iter().rev().find_map(|s| match &s.parsed {
            ModelTurn::Action(a) => Some(a),
            _ => None,
        })
    }

    /// The last action that passed every check and ran.
    pub fn last_executed(&self) -> Option<&ActionInput> {
        self.trace.iter().rev().find_map(|s| match &s.parsed {
            ModelTurn::Action(a) if s.resolved_args.is_some() => Some(a),
            _ => None,
        })
    }

    pub fn executed_actions(&self) -> impl Iterator<Item = &ActionInput> {
        self.trace.iter().filter_map(|s| match &s.parsed {
            ModelTurn::Action(a) if s.resolved_args.is_some() => Some(a),
            _ => None,
        })
    }
}

/// Stores every literal argument of a checked action under `input_<param>`.
/// Memory references are not re-stored. Returns the keys written.
pub fn store_extracted(pool: &mut MemoryPool, checked: &CheckedAction) -> Vec<KeyToken> {
    let mut written = Vec::new();
    for (name, arg) in &checked.action.arguments {
        if !matches!(arg, Argument::Literal(_)) {
            continue;
        }
        let (Ok(key), Some(value)) = (KeyToken::new(format!("input_{name}")), checked.resolved.get(name)) else {
            continue;
        };
        if pool.put(&key, value.clone()).is_ok() {
            written.push(key);
        }
    }
    written
}

fn summarize(payload: &Value) -> String {
    match payload {
        Value::Array(items) => format!("array of {} values", items.len()),
        Value::Object(map) => format!("object with {} fields", map.len()),
        Value::String(s) => format!("text of {} characters", s.chars().count()),
        other => other.to_string(),
    }
}

pub struct Agent {
    backend: Arc<dyn ChatBackend>,
    registry: ToolRegistry,
    config: AgentConfig,
    parser: Parser,
    clock: Clock,
}

impl Agent {
    pub fn new(backend: Arc<dyn ChatBackend>, registry: ToolRegistry, config: AgentConfig) -> Self {
        Self::with_clock(backend, registry, config, Clock::system())
    }

    pub fn with_clock(backend: Arc<dyn ChatBackend>, registry: ToolRegistry, config: AgentConfig, clock: Clock) -> Self {
        let parser = Parser::with_final_marker(config.final_marker.clone());
        Agent { backend, registry, config, parser, clock }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn run_query(&self, session: &mut Session, user_text: &str) -> QueryOutcome {
        self.run_query_observed(session, user_text, &mut |_| {})
    }

    pub fn run_query_observed(
        &self,
        session: &mut Session,
        user_text: &str,
        observer: &mut dyn FnMut(&AgentEvent),
    ) -> QueryOutcome {
        let start = self.clock.now();
        session.original_task = Some(user_text.to_string());
        session.history.push(ChatMessage::user(user_text));

        let mut trace = Vec::new();
        let mut retries = 0;
        let since = |clock: &Clock| clock.now().saturating_sub(start);
        let budget = self.config.budget;

        let result = loop {
            if trace.len() >= budget.max_steps {
                break Err(Failure::StepBudgetExhausted);
            }
            let Some(remaining) = budget.deadline.checked_sub(since(&self.clock)).filter(|d| !d.is_zero()) else {
                break Err(Failure::QueryTimeout);
            };
            let prompt = {
                let pool = session.pool.read();
                assemble_prompt(&session.history, &pool, &self.registry, self.config.prompt_mode())
            };
            let prompt_chars = prompt.iter().map(|m| m.content.len()).sum();
            let raw = match self.call_backend(prompt, remaining) {
                Ok(raw) => raw,
                Err(CallError::Deadline) => break Err(Failure::QueryTimeout),
                Err(CallError::Backend(e)) => break Err(Failure::BackendUnavailable { reason: e.to_string() }),
            };
            if since(&self.clock) >= budget.deadline {
                break Err(Failure::QueryTimeout);
            }

            let parsed = self.parser.parse_turn(&raw);
            session.history.push(ChatMessage::assistant(raw.clone()));
            observer(&AgentEvent::ModelTurn { raw_output: raw.clone(), parsed: parsed.clone() });
            let mut step = StepTrace {
                raw_output: raw,
                parsed,
                errors: Vec::new(),
                resolved_args: None,
                observation: None,
                elapsed: 0.0,
                prompt_chars,
            };

            let checked = {
                let pool = session.pool.read();
                fefo::check(&step.parsed, &self.registry, &pool)
            };
            let errors = match checked {
                Ok(None) => {
                    let ModelTurn::FinalAnswer(text) = &step.parsed else { unreachable!("only final answers pass without an action") };
                    let text = text.clone();
                    step.elapsed = since(&self.clock).as_secs_f64();
                    trace.push(step);
                    break Ok(text);
                }
                Ok(Some(checked)) => {
                    let (observation, model_text) = self.apply(session, &checked, observer);
                    step.resolved_args =
                        Some(checked.resolved.iter().map(|(k, v)| (k.clone(), v.to_json())).collect());
                    session.history.push(ChatMessage::observation(model_text));
                    let errors = match &observation {
                        Observation::Ok { .. } => Vec::new(),
                        Observation::Error { message } => vec![FeFoError::ToolExecutionFailed {
                            tool: checked.action.tool.clone(),
                            message: message.clone(),
                        }],
                    };
                    step.observation = Some(observation);
                    errors
                }
                Err(errors) => errors,
            };
            step.errors = errors.clone();
            step.elapsed = since(&self.clock).as_secs_f64();
            trace.push(step);
            if errors.is_empty() {
                continue;
            }
            if !self.config.fefo || retries >= budget.max_retries {
                break Err(Failure::RetryBudgetExhausted { errors });
            }
            retries += 1;
            let task = session.original_task.as_deref().unwrap_or(user_text);
            let prompt = build_feedback(&errors, task).render();
            observer(&AgentEvent::FefoFeedback { errors, prompt: prompt.clone(), retry: retries });
            session.history.push(ChatMessage::user(prompt));
        };

        match &result {
            Ok(text) => observer(&AgentEvent::FinalAnswer { text: text.clone() }),
            Err(failure) => observer(&AgentEvent::Failure { failure: failure.clone() }),
        }
        QueryOutcome { result, trace, latency: since(&self.clock), retries }
    }

    /// Runs a known-good action against the session as if the model had
    /// emitted it, appending the call and its observation to the history.
    pub fn replay_action(&self, session: &mut Session, user_text: &str, action: &ActionInput) -> Result<Observation, Vec<FeFoError>> {
        let checked = {
            let pool = session.pool.read();
            fefo::check(&ModelTurn::Action(action.clone()), &self.registry, &pool)?
        }
        .expect("an action turn is never a final answer");
        session.original_task = Some(user_text.to_string());
        session.history.push(ChatMessage::user(user_text));
        session.history.push(ChatMessage::assistant(action.render()));
        let (observation, model_text) = self.apply(session, &checked, &mut |_| {});
        session.history.push(ChatMessage::observation(model_text));
        Ok(observation)
    }

    /// Stores literals, executes, stores the result. Returns the observation
    /// and the text the model will see for it.
    fn apply(&self, session: &Session, checked: &CheckedAction, observer: &mut dyn FnMut(&AgentEvent)) -> (Observation, String) {
        let tool = checked.action.tool.clone();
        {
            let mut pool = session.pool.write();
            store_extracted(&mut pool, checked);
        }
        observer(&AgentEvent::ToolCall {
            tool: tool.clone(),
            action: checked.action.clone(),
            resolved_args: checked.resolved.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
        });
        let observation = execute(&checked.schema, &checked.resolved);
        let verbatim = observation.to_json_string();
        let mut stored_as = None;
        let mut model_text = verbatim.clone();
        if let Observation::Ok { payload } = &observation {
            let key = KeyToken::new(format!("result_{tool}")).expect("tool names are valid key suffixes");
            let stored = session.pool.write().put(&key, result_value(&tool, payload)).is_ok();
            if stored {
                if self.config.pmp && verbatim.len() > OBSERVATION_INLINE_LIMIT {
                    model_text = json!({
                        "status": "ok",
                        "stored_as": key.as_str(),
                        "summary": summarize(payload),
                    })
                    .to_string();
                }
                stored_as = Some(key.to_string());
            }
        }
        observer(&AgentEvent::ToolResult { tool, observation: observation.clone(), stored_as });
        let (revision, keys) = {
            let pool = session.pool.read();
            (pool.revision(), pool.list_keys().into_iter().map(String::from).collect())
        };
        observer(&AgentEvent::PoolChanged { revision, keys });
        (observation, model_text)
    }

    fn call_backend(&self, prompt: Vec<ChatMessage>, remaining: Duration) -> Result<String, CallError> {
        if self.clock.is_virtual() {
            return self.backend.chat(&prompt).map_err(CallError::Backend);
        }
        let (tx, rx) = mpsc::channel();
        let backend = Arc::clone(&self.backend);
        std::thread::spawn(move || {
            let _ = tx.send(backend.chat(&prompt));
        });
        match rx.recv_timeout(remaining) {
            Ok(r) => r.map_err(CallError::Backend),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(CallError::Deadline),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(CallError::Backend(LlmError::BackendUnavailable("backend call panicked".into())))
            }
        }
    }
}

enum CallError {
    Deadline,
    Backend(LlmError),
}

/// First line of a JSONL trace file: the prompt texts the run used.
pub fn trace_header(config: &AgentConfig) -> Value {
    json!({
        "kind": "header",
        "prompt_version": PROMPT_VERSION,
        "feedback_template": FEEDBACK_TEMPLATE_VERSION,
        "pmp": config.pmp,
        "fefo": config.fefo,
        "system_prompt": SYSTEM_PROMPT,
        "memory_pool_prompt": if config.pmp { Some(MEMORY_POOL_PROMPT) } else { None },
    })
}

/// Appends one query's steps as line-delimited JSON.
pub fn write_trace<W: Write>(out: &mut W, query: &str, outcome: &QueryOutcome) -> std::io::Result<()> {
    for (i, step) in outcome.trace.iter().enumerate() {
        let line = json!({"kind": "step", "query": query, "index": i, "step": step});
        writeln!(out, "{line}")?;
    }
    let end = match &outcome.result {
        Ok(text) => json!({"kind": "final_answer", "query": query, "text": text, "latency": outcome.latency.as_secs_f64()}),
        Err(f) => json!({"kind": "failure", "query": query, "failure": f, "latency": outcome.latency.as_secs_f64()}),
    };
    writeln!(out, "{end}")
}
