//! Scoring, accuracy aggregation, category runs and the parameter-scale
//! benchmark.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, Failure, QueryOutcome, Session};
use crate::clock::{Clock, VirtualClock};
use crate::dataset::{Category, EvalCase, EvalTurn};
use crate::llm::{ChatBackend, ChatMessage, LlmError, Role};
use crate::parser::{ActionInput, Argument};
use crate::pmp::MemoryPool;
use crate::tools::{conform, ToolRegistry, ToolSchema, DRUG_PROPERTY};
use crate::value::ParameterValue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnScore {
    pub f: u8,
    pub p: u8,
    pub latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub f: u8,
    pub p: u8,
    pub latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
    /// Per-turn scores of a multi-turn sample.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub turns: Vec<TurnScore>,
}

impl SampleScore {
    pub fn single(f: u8, p: u8, latency: f64, fault: Option<String>) -> Self {
        SampleScore { f, p, latency, fault, turns: Vec::new() }
    }

    /// Later-weighted per-turn scores `(f, p)` with weight `t / Σt`.
    pub fn weighted(&self) -> (f64, f64) {
        if self.turns.is_empty() {
            return (self.f as f64, self.p as f64);
        }
        let total: usize = (1..=self.turns.len()).sum();
        self.turns.iter().enumerate().fold((0.0, 0.0), |(wf, wp), (i, t)| {
            let w = (i + 1) as f64 / total as f64;
            (wf + w * t.f as f64, wp + w * t.p as f64)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub category: Category,
    pub n: usize,
    pub acc_f: f64,
    pub acc_p: f64,
    /// Mean wall time per query, in seconds.
    pub mean_latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_acc_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_acc_p: Option<f64>,
    pub per_sample: Vec<SampleScore>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no samples to score")]
    EmptyCategory,
    #[error("sample {index} has p = 1 with f = 0")]
    InvariantViolation { index: usize },
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn trimmed(v: &ParameterValue) -> ParameterValue {
    use ParameterValue::*;
    match v {
        Text(x) => Text(normalize_ws(x)),
        DrugList(x) => DrugList(x.iter().map(|s| s.trim().to_string()).collect()),
        PairList(x) => PairList(x.iter().map(|(a, b)| (a.trim().to_string(), b.trim().to_string())).collect()),
        Conditions(m) => Conditions(m.iter().map(|(k, v)| (k.clone(), trimmed(v))).collect()),
        other => other.clone(),
    }
}

fn values_match(a: &ParameterValue, b: &ParameterValue) -> bool {
    use ParameterValue::*;
    match (a, b) {
        (Text(x), Text(y)) => normalize_ws(x) == normalize_ws(y),
        (Number(x), Number(y)) => x == y,
        (DrugList(x), DrugList(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.trim() == q.trim()),
        (PairList(x), PairList(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.0.trim() == q.0.trim() && p.1.trim() == q.1.trim())
        }
        (Conditions(x), Conditions(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| values_match(v, w)))
        }
        (ToolResult { tool: t1, payload: p1 }, ToolResult { tool: t2, payload: p2 }) => t1 == t2 && p1 == p2,
        _ => false,
    }
}

fn resolve<'a>(arg: &'a Argument, pool: &'a MemoryPool) -> Option<&'a ParameterValue> {
    match arg {
        Argument::Literal(v) => Some(v),
        Argument::MemoryRef(k) => pool.resolve(k.as_str()).ok(),
    }
}

/// Two-stage score of one action: the tool name first, then, only if it
/// matched, the parameters.
///
/// `pool` is the memory pool as it stood when the action was produced; it
/// resolves memory references on either side.
pub fn score_action(
    actual: &ActionInput,
    expected: &ActionInput,
    schema: &ToolSchema,
    pool: &MemoryPool,
) -> (u8, u8, Option<String>) {
    if actual.tool != expected.tool {
        return (0, 0, Some(format!("wrong tool: {} (expected {})", actual.tool, expected.tool)));
    }
    let fail = |fault: String| (1, 0, Some(fault));
    for name in &schema.required {
        if !actual.arguments.contains_key(name) {
            return fail(format!("missing required parameter: {name}"));
        }
    }
    for name in actual.arguments.keys() {
        if schema.param(name).is_none() {
            return fail(format!("unexpected parameter: {name}"));
        }
    }
    for name in expected.arguments.keys() {
        if !actual.arguments.contains_key(name) {
            return fail(format!("missing parameter: {name}"));
        }
    }
    for (name, got) in &actual.arguments {
        let Some(want) = expected.arguments.get(name) else {
            return fail(format!("parameter not in the reference call: {name}"));
        };
        if got == want {
            continue;
        }
        let kind = schema.param(name).expect("checked above").kind;
        let (Some(g), Some(w)) = (resolve(got, pool), resolve(want, pool)) else {
            return fail(format!("unresolvable memory reference for parameter {name}"));
        };
        let (Ok(g), Ok(w)) = (conform(name, kind, &trimmed(g)), conform(name, kind, &trimmed(w))) else {
            return fail(format!("type mismatch for parameter {name}"));
        };
        if !values_match(&g, &w) {
            return fail(format!("incorrect value for parameter {name}"));
        }
    }
    (1, 1, None)
}

pub fn aggregate(scores: Vec<SampleScore>, category: Category) -> Result<CategoryReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyCategory);
    }
    if let Some(index) = scores.iter().position(|s| s.p == 1 && s.f == 0) {
        return Err(EvalError::InvariantViolation { index });
    }
    let n = scores.len();
    let sum_f: u32 = scores.iter().map(|s| s.f as u32).sum();
    let sum_p: u32 = scores.iter().map(|s| s.p as u32).sum();
    let queries: usize = scores.iter().map(|s| s.turns.len().max(1)).sum();
    let mean_latency = scores.iter().map(|s| s.latency).sum::<f64>() / queries as f64;
    let (weighted_acc_f, weighted_acc_p) = if category == Category::MultiTurn {
        let (wf, wp) = scores.iter().map(SampleScore::weighted).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        (Some(wf / n as f64), Some(wp / n as f64))
    } else {
        (None, None)
    };
    Ok(CategoryReport {
        category,
        n,
        acc_f: sum_f as f64 / n as f64,
        acc_p: sum_p as f64 / n as f64,
        mean_latency,
        weighted_acc_f,
        weighted_acc_p,
        per_sample: scores,
    })
}

/// Scores one query outcome against its reference call.
///
/// A timeout is wrong outright. Otherwise the call the model settled on is
/// scored: the last one that ran, or failing that the last one it tried.
pub fn score_outcome(outcome: &QueryOutcome, expected: &ActionInput, registry: &ToolRegistry, pool: &MemoryPool) -> TurnScore {
    let latency = outcome.latency.as_secs_f64();
    if outcome.result == Err(Failure::QueryTimeout) {
        return TurnScore { f: 0, p: 0, latency, fault: Some("timeout".into()) };
    }
    let Some(actual) = outcome.last_executed().or_else(|| outcome.last_action()) else {
        let fault = match &outcome.result {
            Ok(_) => "no tool call".to_string(),
            Err(f) => f.to_string(),
        };
        return TurnScore { f: 0, p: 0, latency, fault: Some(fault) };
    };
    let schema = registry.get(&expected.tool).expect("reference calls validate against their tools");
    let (f, p, fault) = score_action(actual, expected, schema, pool);
    TurnScore { f, p, latency, fault }
}

/// Runs one case through the agent. Later turns of a failed multi-turn
/// sample continue from the state the reference call would have left.
pub fn run_case(backend: Arc<dyn ChatBackend>, config: &AgentConfig, clock: &Clock, case: &EvalCase) -> SampleScore {
    let agent = Agent::with_clock(backend, case.registry.clone(), config.clone(), clock.clone());
    let mut session = Session::with_pool(case.preloaded_pool());
    let mut turns = Vec::with_capacity(case.turns.len());
    for EvalTurn { user_text, expected } in &case.turns {
        let pool_before = session.pool.snapshot();
        let history_len = session.history.len();
        let outcome = agent.run_query(&mut session, user_text);
        let score = score_outcome(&outcome, expected, &case.registry, &pool_before);
        if score.p == 0 && case.turns.len() > 1 {
            *session.pool.write() = pool_before;
            session.history.truncate(history_len);
            let _ = agent.replay_action(&mut session, user_text, expected);
        }
        turns.push(score);
    }
    if case.category != Category::MultiTurn {
        let t = turns.pop().expect("one turn");
        return SampleScore::single(t.f, t.p, t.latency, t.fault);
    }
    let f = turns.iter().all(|t| t.f == 1) as u8;
    let p = turns.iter().all(|t| t.p == 1) as u8;
    let fault = turns
        .iter()
        .enumerate()
        .find_map(|(i, t)| t.fault.as_ref().map(|fl| format!("turn {}: {fl}", i + 1)));
    let latency = turns.iter().map(|t| t.latency).sum();
    SampleScore { f, p, latency, fault, turns }
}

pub fn run_category(
    cases: &[EvalCase],
    category: Category,
    backend: Arc<dyn ChatBackend>,
    config: &AgentConfig,
    clock: &Clock,
) -> Result<CategoryReport, EvalError> {
    let scores = cases.iter().map(|c| run_case(Arc::clone(&backend), config, clock, c)).collect();
    aggregate(scores, category)
}

impl CategoryReport {
    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let weighted = self.weighted_acc_f.is_some();
        let _ = write!(out, "{:<12} {:>5} {:>8} {:>8} {:>12}", "Category", "N", "Acc.F", "Acc.P", "Latency(s)");
        if weighted {
            let _ = write!(out, " {:>10} {:>10}", "W.Acc.F*", "W.Acc.P*");
        }
        out.push('\n');
        let _ = write!(
            out,
            "{:<12} {:>5} {:>8.3} {:>8.3} {:>12.3}",
            self.category.as_str(),
            self.n,
            self.acc_f,
            self.acc_p,
            self.mean_latency
        );
        if let (Some(wf), Some(wp)) = (self.weighted_acc_f, self.weighted_acc_p) {
            let _ = write!(out, " {wf:>10.3} {wp:>10.3}");
        }
        out.push('\n');
        if weighted {
            out.push_str("* later-weighted per-turn score, weight t/sum(t)\n");
        }
        out
    }
}

/// Latency model of the simulated model, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub base: f64,
    pub prefill_per_char: f64,
    pub decode_per_char: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { base: 0.8, prefill_per_char: 2.0e-5, decode_per_char: 0.01 }
    }
}

/// A deterministic stand-in for a served model answering a property request
/// over uploaded molecules.
///
/// Shown a key list that includes `user_smiles`, it passes the key. Shown
/// the molecules inline, it copies them into the call. Responses longer than
/// `max_output` characters are cut off. Every call advances the virtual
/// clock by the cost model.
pub struct SimulatedModel {
    clock: Arc<VirtualClock>,
    costs: CostModel,
    max_output: Option<usize>,
    property: String,
}

impl SimulatedModel {
    pub fn new(clock: Arc<VirtualClock>, costs: CostModel, max_output: Option<usize>, property: &str) -> Self {
        SimulatedModel { clock, costs, max_output, property: property.to_string() }
    }

    fn respond(&self, last: &ChatMessage) -> String {
        if last.role == Role::Observation {
            return format!("Final Answer: the {} predictions are stored in result_{DRUG_PROPERTY}.", self.property);
        }
        let key_line = last.content.lines().rev().find(|l| l.starts_with("Current memory pool keys: ["));
        if key_line.is_some_and(|l| l.contains("user_smiles")) {
            return inline_call(&self.property, "\"(user_smiles)\"");
        }
        match last.content.lines().find_map(|l| l.strip_prefix("user_smiles: ")) {
            Some(list) => inline_call(&self.property, list),
            None => "I cannot find the molecules to analyse.".to_string(),
        }
    }
}

fn inline_call(property: &str, drug_smiles_json: &str) -> String {
    format!(r#"{{"name": "{DRUG_PROPERTY}", "arguments": {{"drug_smiles": {drug_smiles_json}, "property": "{property}"}}}}"#)
}

impl ChatBackend for SimulatedModel {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let last = messages.last().ok_or_else(|| LlmError::BadResponse("no messages".into()))?;
        let prompt_chars: usize = messages.iter().map(|m| m.content.len()).sum();
        let mut out = self.respond(last);
        if let Some(limit) = self.max_output {
            if out.len() > limit {
                out.truncate(limit);
            }
        }
        let secs = self.costs.base
            + self.costs.prefill_per_char * prompt_chars as f64
            + self.costs.decode_per_char * out.len() as f64;
        self.clock.advance(Duration::from_secs_f64(secs));
        Ok(out)
    }
}

/// Deterministic synthetic SMILES: molecule `i` has length `len + i % 2`.
pub fn synthetic_smiles(count: usize, len: usize, seed: u64) -> Vec<String> {
    use rand::{Rng, SeedableRng};
    const PIECES: [&str; 8] = ["C", "CC", "N", "O", "C(=O)", "C(C)", "c1ccccc1", "C(N)"];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let target = len + i % 2;
            let mut s = String::from("C");
            while s.len() < target {
                let room = target - s.len();
                let fitting: Vec<&str> = PIECES.iter().copied().filter(|p| p.len() <= room).collect();
                s.push_str(fitting[rng.gen_range(0..fitting.len())]);
            }
            s
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    Pmp,
    NoPmp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub count: usize,
    pub mode: ScaleMode,
    pub avg_len: f64,
    pub acc_f: f64,
    pub acc_p: f64,
    pub latency: f64,
    pub completed: bool,
    /// Characters of the first prompt the model saw.
    pub prompt_chars: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub counts: Vec<usize>,
    pub avg_len: usize,
    /// Largest molecule count the inlined mode's response limit can hold.
    pub cap_molecules: usize,
    pub costs: CostModel,
    pub seed: u64,
    pub property: String,
}

impl ScaleConfig {
    pub fn new(counts: Vec<usize>, avg_len: usize, cap_molecules: usize) -> Self {
        ScaleConfig { counts, avg_len, cap_molecules, costs: CostModel::default(), seed: 7, property: "esol".into() }
    }

    /// Response limit, in characters, of the inlined mode: exactly the call
    /// that copies `cap_molecules` molecules.
    pub fn max_output(&self) -> usize {
        let molecules = synthetic_smiles(self.cap_molecules, self.avg_len, self.seed);
        inline_call(&self.property, &serde_json::to_string(&molecules).expect("strings serialize")).len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub config: ScaleConfig,
    pub max_output: usize,
    pub rows: Vec<ScaleRow>,
}

pub fn scale_bench(config: &ScaleConfig) -> ScaleReport {
    let max_output = config.max_output();
    let mut rows = Vec::new();
    for mode in [ScaleMode::Pmp, ScaleMode::NoPmp] {
        for &count in &config.counts {
            rows.push(scale_point(config, mode, count, max_output));
        }
    }
    ScaleReport { config: config.clone(), max_output, rows }
}

fn scale_point(config: &ScaleConfig, mode: ScaleMode, count: usize, max_output: usize) -> ScaleRow {
    let molecules = synthetic_smiles(count, config.avg_len, config.seed);
    let avg_len = molecules.iter().map(String::len).sum::<usize>() as f64 / count.max(1) as f64;
    let (clock, virt) = Clock::virtual_clock();
    let limit = (mode == ScaleMode::NoPmp).then_some(max_output);
    let backend = Arc::new(SimulatedModel::new(virt, config.costs, limit, &config.property));
    let agent_config = AgentConfig { pmp: mode == ScaleMode::Pmp, ..AgentConfig::default() };
    let registry = ToolRegistry::standard();
    let agent = Agent::with_clock(backend, registry.clone(), agent_config, clock);

    let mut pool = MemoryPool::new();
    pool.put_str("user_smiles", ParameterValue::DrugList(molecules)).expect("synthetic SMILES are valid");
    let mut session = Session::with_pool(pool.clone());
    let expected = ActionInput::new(DRUG_PROPERTY)
        .memory_ref("drug_smiles", "user_smiles")
        .literal("property", ParameterValue::text(&config.property));
    let question = format!("Predict the {} of the molecules I uploaded.", config.property);
    let outcome = agent.run_query(&mut session, &question);
    let score = score_outcome(&outcome, &expected, &registry, &pool);
    ScaleRow {
        count,
        mode,
        avg_len,
        acc_f: score.f as f64,
        acc_p: score.p as f64,
        latency: score.latency,
        completed: outcome.result.is_ok() && score.p == 1,
        prompt_chars: outcome.trace.first().map_or(0, |s| s.prompt_chars),
        fault: score.fault,
    }
}

impl ScaleReport {
    pub fn rows_for(&self, mode: ScaleMode) -> impl Iterator<Item = &ScaleRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!(self)
    }

    /// Completion grid (one column per count) followed by per-row detail.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let counts = &self.config.counts;
        let label_w = 22;
        let _ = write!(out, "{:<label_w$}", "SMILES Count");
        for c in counts {
            let _ = write!(out, " {c:>5}");
        }
        out.push('\n');
        for (mode, label) in [
            (ScaleMode::Pmp, "pmp".to_string()),
            (ScaleMode::NoPmp, format!("no_pmp (cap={})", self.config.cap_molecules)),
        ] {
            let _ = write!(out, "{label:<label_w$}");
            for r in self.rows_for(mode) {
                let _ = write!(out, " {:>5}", if r.completed { "✓" } else { "✗" });
            }
            out.push('\n');
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>8} {:>6} {:>6} {:>11} {:>9} {:>13}",
            "mode", "count", "avg_len", "Acc.F", "Acc.P", "latency(s)", "completed", "prompt_chars"
        );
        for r in &self.rows {
            let mode = match r.mode {
                ScaleMode::Pmp => "pmp",
                ScaleMode::NoPmp => "no_pmp",
            };
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>8.2} {:>6.2} {:>6.2} {:>11.3} {:>9} {:>13}",
                mode,
                r.count,
                r.avg_len,
                r.acc_f,
                r.acc_p,
                r.latency,
                if r.completed { "yes" } else { "no" },
                r.prompt_chars
            );
        }
        out
    }
}

/// Parses `start:end:step` or a comma-separated list.
pub fn parse_counts(text: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("invalid counts {text:?}; expected start:end:step or a comma-separated list");
    let counts: Vec<usize> = if text.contains(':') {
        let parts: Vec<usize> = text.split(':').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        let [start, end, step] = parts[..] else { return Err(bad()) };
        if step == 0 || start > end {
            return Err(bad());
        }
        (start..=end).step_by(step).collect()
    } else {
        text.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if counts.is_empty() || counts.contains(&0) {
        return Err(bad());
    }
    Ok(counts)
}
