//! Chat backends and prompt assembly.

use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::clock::Clock;
use crate::pmp::MemoryPool;
use crate::tools::ToolRegistry;

pub const PROMPT_VERSION: &str = "prompt-v1";

pub const SYSTEM_PROMPT: &str = r#"You are a drug discovery assistant that completes research tasks by calling tools.
To call a tool, reply with exactly one JSON object and nothing else:
{"name": "<tool name>", "arguments": {"<parameter>": <value>}}
Use only the tools listed below and only the parameters they declare, and always include every required parameter.
A list of drugs is a JSON array of SMILES strings. A list of pairs is a JSON array of two-element arrays.
After a tool returns an observation, either call the next tool or, when the task is finished, reply with:
Final Answer: <answer for the user>"#;

pub const MEMORY_POOL_PROMPT: &str = r#"You have access to a parameter memory pool. It stores parameters such as molecule lists, protein sequences and earlier tool results under short keys, so large data never has to be copied into a tool call. Your responsibility is to pass the correct parameters to the tools.
Every input you receive has two parts: the user's question or the latest tool output, and a line describing the current memory pool, for example:
Current memory pool keys: [user_smiles, result_drug_generation]
How to use the memory pool:
- If a required parameter is written in the question, extract it from the question directly.
- If the question does not contain the parameter, choose the matching key from the current memory pool keys and write it in parentheses as the argument value, e.g. "drug_smiles": "(user_smiles)".
- Only use keys that are listed. Never invent a key.
Correct: keys [user_smiles], question "Predict the solubility of the molecules I uploaded." -> {"name": "drug_property", "arguments": {"drug_smiles": "(user_smiles)", "property": "esol"}}
Incorrect: {"name": "drug_property", "arguments": {"drug_smiles": "(uploaded_molecules)", "property": "esol"}} because uploaded_molecules is not a stored key."#;

const TRUNCATION_MARKER: &str = "...[truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Observation,
}

impl Role {
    /// Role name on the OpenAI-compatible wire; observations travel as user text.
    pub fn wire_name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User | Role::Observation => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage { role, content: content.into() }
    }
    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
    pub fn observation(content: impl Into<String>) -> Self {
        Self::new(Role::Observation, content)
    }
}

/// How pool contents reach the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PromptMode {
    /// Only the key list is shown; values stay in the pool.
    #[default]
    Pmp,
    /// Baseline: stored values are inlined as memory text, optionally cut to
    /// a total prompt size in characters.
    Inline { context_cap: Option<usize> },
}

/// System prompt, history, and the pool description appended to the latest
/// input.
pub fn assemble_prompt(
    history: &[ChatMessage],
    pool: &MemoryPool,
    registry: &ToolRegistry,
    mode: PromptMode,
) -> Vec<ChatMessage> {
    let mut system = String::from(SYSTEM_PROMPT);
    if mode == PromptMode::Pmp {
        system.push_str("\n\n");
        system.push_str(MEMORY_POOL_PROMPT);
    }
    system.push_str("\n\nAvailable tools:");
    for schema in registry.schemas() {
        system.push('\n');
        system.push_str(&schema.to_json().to_string());
    }

    let mut messages = Vec::with_capacity(history.len() + 1);
    messages.push(ChatMessage::system(system));
    messages.extend(history.iter().cloned());

    let suffix = match mode {
        PromptMode::Pmp => format!("\n\n{}", pool.render_key_prompt()),
        PromptMode::Inline { context_cap } => {
            let memory = inline_memory(pool);
            let base: usize = messages.iter().map(|m| m.content.len()).sum::<usize>() + "\n\nMemory:\n".len();
            let text = match context_cap {
                Some(cap) if base + memory.len() > cap => {
                    let room = cap.saturating_sub(base + TRUNCATION_MARKER.len());
                    let mut cut = room.min(memory.len());
                    while !memory.is_char_boundary(cut) {
                        cut -= 1;
                    }
                    format!("{}{TRUNCATION_MARKER}", &memory[..cut])
                }
                _ => memory,
            };
            format!("\n\nMemory:\n{text}")
        }
    };
    if let Some(last) = messages.last_mut().filter(|m| m.role != Role::System) {
        last.content.push_str(&suffix);
    }
    messages
}

fn inline_memory(pool: &MemoryPool) -> String {
    if pool.is_empty() {
        return "(empty)".to_string();
    }
    pool.iter()
        .filter_map(|(k, stack)| stack.last().map(|v| format!("{k}: {}", v.to_json())))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("backend timed out")]
    BackendTimeout,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("bad response from backend: {0}")]
    BadResponse(String),
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

/// Predicate over the content of the last message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Always,
    Contains(String),
    NotContains(String),
    Regex(String),
    All(Vec<Matcher>),
}

impl Matcher {
    pub fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Always => true,
            Matcher::Contains(s) => text.contains(s.as_str()),
            Matcher::NotContains(s) => !text.contains(s.as_str()),
            Matcher::Regex(re) => Regex::new(re).map(|r| r.is_match(text)).unwrap_or(false),
            Matcher::All(ms) => ms.iter().all(|m| m.matches(text)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub response: String,
    /// Repeating steps are never consumed.
    #[serde(default)]
    pub repeat: bool,
    #[serde(default)]
    pub delay_ms: u64,
}

impl ScriptStep {
    pub fn new(matcher: Matcher, response: impl Into<String>) -> Self {
        ScriptStep { matcher, response: response.into(), repeat: false, delay_ms: 0 }
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }

    pub fn delayed(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<ScriptStep>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read backend config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid backend config: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
struct ConfigFile {
    backend: BackendConfig,
}

/// Deterministic scripted backend configuration.
pub fn scripted_program(steps: Vec<ScriptStep>) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::Scripted,
        base_url: None,
        model: None,
        timeout_s: default_timeout(),
        api_key_env: None,
        steps,
    }
}

impl BackendConfig {
    pub fn http(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            base_url: Some(base_url.into()),
            model: Some(model.into()),
            timeout_s: default_timeout(),
            api_key_env: None,
            steps: Vec::new(),
        }
    }

    /// Reads the `[backend]` table of a TOML config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut config = file.backend;
        if let Ok(var) = std::env::var("PILOT_API_KEY_ENV") {
            config.api_key_env = Some(var);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.kind {
            BackendKind::Http => {
                if self.base_url.as_deref().is_none_or(str::is_empty) || self.model.as_deref().is_none_or(str::is_empty) {
                    return Err(ConfigError::Invalid("http backend requires base_url and model".into()));
                }
            }
            BackendKind::Scripted => {
                if self.steps.is_empty() {
                    return Err(ConfigError::Invalid("scripted backend requires at least one step".into()));
                }
                for step in &self.steps {
                    check_matcher(&step.matcher)?;
                }
            }
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(ConfigError::Invalid("timeout_s must be positive".into()));
        }
        Ok(())
    }

    pub fn build(&self, clock: &Clock) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Http => Arc::new(HttpBackend::new(self)),
            BackendKind::Scripted => Arc::new(ScriptedBackend::new(self.steps.clone(), clock.clone())),
        })
    }
}

fn check_matcher(m: &Matcher) -> Result<(), ConfigError> {
    match m {
        Matcher::Regex(re) => Regex::new(re).map(|_| ()).map_err(|e| ConfigError::Invalid(e.to_string())),
        Matcher::All(ms) => ms.iter().try_for_each(check_matcher),
        _ => Ok(()),
    }
}

/// Answers each call with the first unconsumed step matching the last message.
pub struct ScriptedBackend {
    steps: Vec<ScriptStep>,
    consumed: Mutex<Vec<bool>>,
    clock: Clock,
}

impl ScriptedBackend {
    pub fn new(steps: Vec<ScriptStep>, clock: Clock) -> Self {
        let consumed = Mutex::new(vec![false; steps.len()]);
        ScriptedBackend { steps, consumed, clock }
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let last = messages
            .last()
            .ok_or_else(|| LlmError::BackendUnavailable("no messages".into()))?;
        let step = {
            let mut consumed = self.consumed.lock().unwrap_or_else(|e| e.into_inner());
            let idx = self
                .steps
                .iter()
                .enumerate()
                .position(|(i, s)| !consumed[i] && s.matcher.matches(&last.content))
                .ok_or_else(|| LlmError::BackendUnavailable("script has no matching step".into()))?;
            if !self.steps[idx].repeat {
                consumed[idx] = true;
            }
            &self.steps[idx]
        };
        if step.delay_ms > 0 {
            self.clock.sleep(Duration::from_millis(step.delay_ms));
        }
        Ok(step.response.clone())
    }
}

/// OpenAI-compatible chat-completions client.
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Self {
        let base = config.base_url.as_deref().unwrap_or_default().trim_end_matches('/');
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        HttpBackend {
            endpoint: format!("{base}/v1/chat/completions"),
            model: config.model.clone().unwrap_or_default(),
            api_key: config.api_key_env.as_deref().and_then(|var| std::env::var(var).ok()),
            agent,
        }
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        let wire: Vec<Value> = messages
            .iter()
            .map(|m| {
                let content = match m.role {
                    Role::Observation => format!("Observation: {}", m.content),
                    _ => m.content.clone(),
                };
                json!({"role": m.role.wire_name(), "content": content})
            })
            .collect();
        json!({"model": self.model, "messages": wire, "stream": false})
    }
}

/// Extracts `choices[0].message.content` from a chat-completions response.
pub fn completion_text(body: &Value) -> Result<String, LlmError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        if messages.is_empty() {
            return Err(LlmError::BadResponse("no messages to send".into()));
        }
        let mut request = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(self.request_body(messages)).map_err(map_ureq_error)?;
        let status = response.status().as_u16();
        if status >= 500 || status == 429 {
            return Err(LlmError::BackendUnavailable(format!("HTTP {status}")));
        }
        if status >= 400 {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Err(LlmError::BadResponse(format!("HTTP {status}: {text}")));
        }
        let body: Value = response.body_mut().read_json().map_err(map_ureq_error)?;
        completion_text(&body)
    }
}

fn map_ureq_error(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(_) => LlmError::BackendTimeout,
        ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => LlmError::BackendTimeout,
        ureq::Error::Json(err) => LlmError::BadResponse(err.to_string()),
        ureq::Error::HostNotFound | ureq::Error::ConnectionFailed | ureq::Error::Io(_) => {
            LlmError::BackendUnavailable(e.to_string())
        }
        other => LlmError::BadResponse(other.to_string()),
    }
}
