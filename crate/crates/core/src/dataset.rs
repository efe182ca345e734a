//! TCDD-style ShareGPT samples: loading, validation, evaluation cases,
//! export, and the synthetic fixture generator.

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent::store_extracted;
use crate::fefo::{self, FeFoError};
use crate::llm::{MEMORY_POOL_PROMPT, SYSTEM_PROMPT};
use crate::parser::{ActionInput, ModelTurn};
use crate::pmp::{KeyToken, MemoryPool};
use crate::tools::{self, execute, result_value, Observation, ToolRegistry};
use crate::value::ParameterValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Human,
    FunctionCall,
    Observation,
    Gpt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub from: Speaker,
    pub value: String,
}

impl Message {
    fn new(from: Speaker, value: impl Into<String>) -> Self {
        Message { from, value: value.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcddSample {
    pub conversations: Vec<Message>,
    pub system: String,
    /// Serialized tool schema list.
    pub tools: String,
    /// Values the user uploaded before the conversation, keyed by pool key.
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub memory: IndexMap<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Simple,
    Multiple,
    MultiTurn,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Simple, Category::Multiple, Category::MultiTurn];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Simple => "simple",
            Category::Multiple => "multiple",
            Category::MultiTurn => "multi_turn",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(Category::Simple),
            "multiple" => Ok(Category::Multiple),
            "multi_turn" | "multi-turn" => Ok(Category::MultiTurn),
            other => Err(format!("unknown category {other:?}; expected simple, multiple or multi_turn")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTurn {
    pub user_text: String,
    pub expected: ActionInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub category: Category,
    pub turns: Vec<EvalTurn>,
    pub pool_preload: Vec<(KeyToken, ParameterValue)>,
    pub registry: ToolRegistry,
}

impl EvalCase {
    pub fn preloaded_pool(&self) -> MemoryPool {
        let mut pool = MemoryPool::new();
        for (k, v) in &self.pool_preload {
            pool.put(k, v.clone()).expect("preload values were validated on load");
        }
        pool
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("sample {index}: {reason}")]
    MalformedSample { index: usize, reason: String },
    #[error("sample {index} is not a {category} case: {reason}")]
    CategoryMismatch { index: usize, category: Category, reason: String },
}

/// Reads a JSON array of samples, or one sample per line, and validates each.
pub fn load(path: &Path) -> Result<Vec<TcddSample>, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Vec<TcddSample>, DatasetError> {
    let samples: Vec<TcddSample> = if text.trim_start().starts_with('[') {
        serde_json::from_str::<Vec<Value>>(text)
            .map_err(|e| DatasetError::MalformedSample { index: 0, reason: format!("invalid JSON: {e}") })?
            .into_iter()
            .enumerate()
            .map(|(i, v)| serde_json::from_value(v).map_err(|e| malformed(i, e)))
            .collect::<Result<_, _>>()?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| malformed(i, e)))
            .collect::<Result<_, _>>()?
    };
    for (i, s) in samples.iter().enumerate() {
        validate(s).map_err(|reason| DatasetError::MalformedSample { index: i, reason })?;
    }
    Ok(samples)
}

fn malformed(index: usize, e: impl fmt::Display) -> DatasetError {
    DatasetError::MalformedSample { index, reason: e.to_string() }
}

/// Canonical serialization: a pretty-printed JSON array and a trailing newline.
pub fn to_canonical_string(samples: &[TcddSample]) -> String {
    let mut s = serde_json::to_string_pretty(samples).expect("samples serialize");
    s.push('\n');
    s
}

pub fn export(samples: &[TcddSample], path: &Path) -> Result<(), DatasetError> {
    std::fs::write(path, to_canonical_string(samples))
        .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })
}

/// One function call in a sample, replayed against the stub tools.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedCall {
    pub turn: usize,
    pub action: ActionInput,
    pub errors: Vec<FeFoError>,
}

/// Checks a sample's invariants and returns its replayed calls.
///
/// Beyond the role grammar, every call is re-run through the same checks and
/// stubs the agent uses: calls that pass must have the recorded observation
/// verbatim, calls that fail must have an error observation, and every human
/// turn must end in a call that passed.
pub fn validate(sample: &TcddSample) -> Result<Vec<ReplayedCall>, String> {
    check_grammar(&sample.conversations)?;
    let registry = ToolRegistry::from_tools_json(&sample.tools).map_err(|e| format!("tools field: {e}"))?;
    let mut pool = preload(sample)?;

    let mut calls = Vec::new();
    let mut turn = 0;
    let mut turn_ok = false;
    let convo = &sample.conversations;
    for (i, msg) in convo.iter().enumerate() {
        match msg.from {
            Speaker::Human if i > 0 => turn += 1,
            Speaker::FunctionCall => {
                let action = ActionInput::from_canonical(&msg.value)
                    .ok_or_else(|| format!("message {i}: function_call is not a canonical action: {:?}", msg.value))?;
                let recorded: Observation = serde_json::from_str(&convo[i + 1].value)
                    .map_err(|e| format!("message {}: observation is not an observation document: {e}", i + 1))?;
                let errors = match fefo::check(&ModelTurn::Action(action.clone()), &registry, &pool) {
                    Ok(Some(checked)) => {
                        store_extracted(&mut pool, &checked);
                        let observation = execute(&checked.schema, &checked.resolved);
                        if observation != recorded {
                            return Err(format!("message {}: observation differs from the stub output", i + 1));
                        }
                        match &observation {
                            Observation::Ok { payload } => {
                                let key = KeyToken::new(format!("result_{}", action.tool)).map_err(|e| e.to_string())?;
                                pool.put(&key, result_value(&action.tool, payload)).map_err(|e| e.to_string())?;
                                Vec::new()
                            }
                            Observation::Error { message } => {
                                vec![FeFoError::ToolExecutionFailed { tool: action.tool.clone(), message: message.clone() }]
                            }
                        }
                    }
                    Ok(None) => unreachable!("action turns are never final answers"),
                    Err(errors) => {
                        if recorded.is_ok() {
                            return Err(format!("message {i}: rejected call has a successful observation"));
                        }
                        errors
                    }
                };
                turn_ok = errors.is_empty();
                calls.push(ReplayedCall { turn, action, errors });
            }
            Speaker::Gpt => {
                let has_call = calls.iter().any(|c| c.turn == turn);
                if has_call && !turn_ok {
                    return Err(format!("message {i}: turn {turn} ends without a successful call"));
                }
                turn_ok = false;
            }
            _ => {}
        }
    }
    Ok(calls)
}

fn preload(sample: &TcddSample) -> Result<MemoryPool, String> {
    let mut pool = MemoryPool::new();
    for (k, v) in &sample.memory {
        let key = KeyToken::new(k.clone()).map_err(|e| format!("memory: {e}"))?;
        pool.put(&key, ParameterValue::from_json(v)).map_err(|e| format!("memory: {e}"))?;
    }
    Ok(pool)
}

/// `(human (function_call observation)* gpt)+`
fn check_grammar(convo: &[Message]) -> Result<(), String> {
    #[derive(PartialEq)]
    enum State {
        Start,
        AfterHuman,
        AfterCall,
        AfterObservation,
        AfterGpt,
    }
    let mut state = State::Start;
    for (i, m) in convo.iter().enumerate() {
        state = match (&state, m.from) {
            (State::Start | State::AfterGpt, Speaker::Human) => State::AfterHuman,
            (State::AfterHuman | State::AfterObservation, Speaker::FunctionCall) => State::AfterCall,
            (State::AfterCall, Speaker::Observation) => State::AfterObservation,
            (State::AfterHuman | State::AfterObservation, Speaker::Gpt) => State::AfterGpt,
            (State::Start, _) => return Err("first conversation entry must be human".to_string()),
            (State::AfterCall, f) => {
                return Err(format!("message {i}: function_call must be followed by an observation, found {f:?}"))
            }
            (_, f) => return Err(format!("message {i}: unexpected {f:?}")),
        };
    }
    if state != State::AfterGpt {
        return Err("conversation must end with a gpt reply".to_string());
    }
    Ok(())
}

/// Evaluation cases of `category`, one per sample. The expected action of
/// each human turn is its last successful function call.
pub fn to_eval_cases(samples: &[TcddSample], category: Category) -> Result<Vec<EvalCase>, DatasetError> {
    samples
        .iter()
        .enumerate()
        .map(|(index, sample)| {
            let mismatch = |reason: String| DatasetError::CategoryMismatch { index, category, reason };
            let calls = validate(sample).map_err(|reason| DatasetError::MalformedSample { index, reason })?;
            let registry = ToolRegistry::from_tools_json(&sample.tools).expect("validated");
            let humans: Vec<&Message> = sample.conversations.iter().filter(|m| m.from == Speaker::Human).collect();
            let mut turns = Vec::with_capacity(humans.len());
            for (t, human) in humans.iter().enumerate() {
                let expected = calls
                    .iter()
                    .rev()
                    .find(|c| c.turn == t && c.errors.is_empty())
                    .ok_or_else(|| mismatch(format!("turn {t} has no function call")))?;
                turns.push(EvalTurn { user_text: human.value.clone(), expected: expected.action.clone() });
            }
            let fits = match category {
                Category::Simple => turns.len() == 1 && registry.len() == 1,
                Category::Multiple => turns.len() == 1 && registry.len() > 1,
                Category::MultiTurn => turns.len() >= 2,
            };
            if !fits {
                return Err(mismatch(format!("{} turns over {} tools", turns.len(), registry.len())));
            }
            let pool_preload = preload(sample)
                .expect("validated")
                .iter()
                .map(|(k, stack)| (k.clone(), stack.last().expect("non-empty").clone()))
                .collect();
            Ok(EvalCase { category, turns, pool_preload, registry })
        })
        .collect()
}

/// The category a sample belongs to, by turn and tool count.
pub fn categorize(sample: &TcddSample) -> Option<Category> {
    let turns = sample.conversations.iter().filter(|m| m.from == Speaker::Human).count();
    let tools = ToolRegistry::from_tools_json(&sample.tools).ok()?.len();
    match (turns, tools) {
        (0, _) | (_, 0) => None,
        (1, 1) => Some(Category::Simple),
        (1, _) => Some(Category::Multiple),
        _ => Some(Category::MultiTurn),
    }
}

const MOLECULES: [&str; 16] = [
    "CCO",
    "c1ccccc1",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "Oc1ccccc1",
    "CC(=O)Nc1ccc(O)cc1",
    "OC(=O)c1ccccc1O",
    "CCN(CC)CC",
    "C1CCCCC1",
    "c1ccncc1",
    "CC(C)O",
    "COc1ccc2[nH]cc(CCN)c2c1",
    "C1=CC=C(C=C1)C=O",
    "CC(N)Cc1ccccc1",
    "O=C(O)CCc1ccccc1",
];

const TARGETS: [&str; 4] = [
    "MKTAYIAKQRQISFVKSHFSRQ",
    "MEEPQSDPSVEPPLSQETFSDLWKLL",
    "MTEYKLVVVGAGGVGKSALTIQLIQ",
    "MGSSHHHHHHSSGLVPRGSHMASMT",
];

const CELL_LINES: [&str; 5] = ["MCF7", "A549", "HeLa", "HepG2", "PC3"];

fn property_phrase(p: &str) -> &'static str {
    match p {
        "esol" => "aqueous solubility (esol)",
        "freesolv" => "hydration free energy (freesolv)",
        "lipo" => "lipophilicity (lipo)",
        "bace" => "BACE-1 inhibition (bace)",
        _ => "blood-brain barrier penetration (bbbp)",
    }
}

const ALL_PROPERTIES: [&str; 5] = ["esol", "freesolv", "lipo", "bace", "bbbp"];

struct Draft {
    text: String,
    action: ActionInput,
}

struct Gen {
    rng: ChaCha8Rng,
}

impl Gen {
    fn pick<'a>(&mut self, items: &[&'a str]) -> &'a str {
        items.choose(&mut self.rng).expect("non-empty")
    }

    fn molecules(&mut self, n: usize) -> Vec<String> {
        MOLECULES.choose_multiple(&mut self.rng, n).map(|s| s.to_string()).collect()
    }

    fn draft(&mut self, tool: &str, uploaded: bool) -> Draft {
        match tool {
            tools::DRUG_PROPERTY => {
                let p = self.pick(&ALL_PROPERTIES);
                let (text, action) = if uploaded {
                    (
                        format!("Predict the {} of the molecules I uploaded.", property_phrase(p)),
                        ActionInput::new(tool).memory_ref("drug_smiles", "user_smiles"),
                    )
                } else {
                    let n = self.rng.gen_range(1..=3);
                    let mols = self.molecules(n);
                    (
                        format!("Predict the {} of {}.", property_phrase(p), mols.join(", ")),
                        ActionInput::new(tool).literal("drug_smiles", ParameterValue::DrugList(mols)),
                    )
                };
                Draft { text, action: action.literal("property", ParameterValue::text(p)) }
            }
            tools::DRUG_CELL_RESPONSE => {
                let (m, c) = (self.pick(&MOLECULES), self.pick(&CELL_LINES));
                Draft {
                    text: format!("How sensitive is the {c} cell line to {m}?"),
                    action: ActionInput::new(tool)
                        .literal("drug_cell_pairs", ParameterValue::PairList(vec![(m.into(), c.into())])),
                }
            }
            tools::DRUG_TARGET_AFFINITY | tools::DRUG_TARGET_INTERACTION => {
                let (m, t) = (self.pick(&MOLECULES), self.pick(&TARGETS));
                let text = if tool == tools::DRUG_TARGET_AFFINITY {
                    format!("Estimate the binding affinity of {m} to the protein {t}.")
                } else {
                    format!("Does {m} interact with the target protein {t}?")
                };
                Draft {
                    text,
                    action: ActionInput::new(tool)
                        .literal("drug_target_pairs", ParameterValue::PairList(vec![(m.into(), t.into())])),
                }
            }
            tools::DRUG_DRUG_INTERACTION => {
                let pair = self.molecules(2);
                let reg = self.rng.gen_bool(0.3);
                let text = if reg {
                    format!("Give an interaction strength score for taking {} together with {}.", pair[0], pair[1])
                } else {
                    format!("Is it safe to combine {} with {}?", pair[0], pair[1])
                };
                let mut action = ActionInput::new(tool)
                    .literal("drug_pairs", ParameterValue::PairList(vec![(pair[0].clone(), pair[1].clone())]));
                if reg {
                    action = action.literal("task", ParameterValue::text("reg"));
                }
                Draft { text, action }
            }
            tools::DRUG_GENERATION => {
                let n = self.rng.gen_range(2..=6);
                let p = self.pick(&ALL_PROPERTIES);
                let (dir, word) = if self.rng.gen_bool(0.5) { ("maximize", "high") } else { ("minimize", "low") };
                let conditions: IndexMap<String, ParameterValue> = [
                    ("count".to_string(), ParameterValue::Number(n as f64)),
                    ("target_property".to_string(), ParameterValue::text(p)),
                    ("direction".to_string(), ParameterValue::text(dir)),
                ]
                .into_iter()
                .collect();
                Draft {
                    text: format!("Generate {n} new molecules with {word} {}.", property_phrase(p)),
                    action: ActionInput::new(tool).literal("conditions", ParameterValue::Conditions(conditions)),
                }
            }
            tools::DRUG_OPTIMIZATION => {
                let m = self.pick(&MOLECULES);
                self.optimization(m)
            }
            _ => {
                let n = self.rng.gen_range(1..=2);
                let mols = self.molecules(n);
                Draft {
                    text: format!("Suggest a synthesis route for {}.", mols.join(" and ")),
                    action: ActionInput::new(tool).literal("drug_smiles", ParameterValue::DrugList(mols)),
                }
            }
        }
    }

    fn optimization(&mut self, smiles: &str) -> Draft {
        let p = self.pick(&ALL_PROPERTIES);
        let (dir, word) = if self.rng.gen_bool(0.5) { ("maximize", "increase") } else { ("minimize", "decrease") };
        let conditions: IndexMap<String, ParameterValue> = [
            ("target_property".to_string(), ParameterValue::text(p)),
            ("direction".to_string(), ParameterValue::text(dir)),
        ]
        .into_iter()
        .collect();
        Draft {
            text: format!("Optimize {smiles} to {word} its {}.", property_phrase(p)),
            action: ActionInput::new(tools::DRUG_OPTIMIZATION)
                .literal("drug_smiles", ParameterValue::text(smiles))
                .literal("conditions", ParameterValue::Conditions(conditions)),
        }
    }

    /// A broken variant of a correct action: a dropped required parameter or
    /// a memory reference to a key that was never stored.
    fn corrupt(&mut self, action: &ActionInput) -> ActionInput {
        let mut bad = action.clone();
        let first = bad.arguments.keys().next().cloned().expect("actions have arguments");
        if self.rng.gen_bool(0.5) {
            bad.arguments.shift_remove(&first);
        } else {
            bad.arguments.insert(
                first,
                crate::parser::Argument::MemoryRef(KeyToken::new("uploaded_molecules").expect("valid")),
            );
        }
        bad
    }
}

/// Builds samples by running drafts through the stub tools, so recorded
/// observations always match what the tools return.
struct SampleBuilder {
    sample: TcddSample,
    registry: ToolRegistry,
    pool: MemoryPool,
}

impl SampleBuilder {
    fn new(registry: ToolRegistry, memory: IndexMap<String, Value>) -> Self {
        let pmp = !memory.is_empty();
        let system = if pmp { format!("{SYSTEM_PROMPT}\n\n{MEMORY_POOL_PROMPT}") } else { SYSTEM_PROMPT.to_string() };
        let sample = TcddSample { conversations: Vec::new(), system, tools: registry.to_tools_json(), memory };
        let pool = preload(&sample).expect("generator memory is valid");
        SampleBuilder { sample, registry, pool }
    }

    fn human(&mut self, text: &str) {
        self.sample.conversations.push(Message::new(Speaker::Human, text));
    }

    fn call(&mut self, action: &ActionInput) -> Observation {
        let observation = match fefo::check(&ModelTurn::Action(action.clone()), &self.registry, &self.pool) {
            Ok(Some(checked)) => {
                store_extracted(&mut self.pool, &checked);
                let obs = execute(&checked.schema, &checked.resolved);
                if let Observation::Ok { payload } = &obs {
                    let key = KeyToken::new(format!("result_{}", action.tool)).expect("valid");
                    self.pool.put(&key, result_value(&action.tool, payload)).expect("stub output is valid");
                }
                obs
            }
            Ok(None) => unreachable!(),
            Err(errors) => {
                Observation::error(errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
            }
        };
        self.sample.conversations.push(Message::new(Speaker::FunctionCall, action.render()));
        self.sample.conversations.push(Message::new(Speaker::Observation, observation.to_json_string()));
        observation
    }

    fn answer(&mut self, tool: &str, observation: &Observation) {
        let text = match observation {
            Observation::Ok { payload } => format!("Here are the {} results: {payload}", tool.replace('_', " ")),
            Observation::Error { message } => format!("The {tool} call failed: {message}"),
        };
        self.sample.conversations.push(Message::new(Speaker::Gpt, text));
    }

    fn single(&mut self, draft: &Draft) {
        self.human(&draft.text);
        let obs = self.call(&draft.action);
        self.answer(&draft.action.tool, &obs);
    }

    fn finish(self) -> TcddSample {
        debug_assert!(validate(&self.sample).is_ok(), "{:?}", validate(&self.sample));
        self.sample
    }
}

fn uploaded_memory(g: &mut Gen) -> IndexMap<String, Value> {
    let n = g.rng.gen_range(3..=8);
    let mut m = IndexMap::new();
    m.insert("user_smiles".to_string(), json!(g.molecules(n)));
    m
}

fn single_turn(g: &mut Gen, tool: &str, registry: ToolRegistry) -> TcddSample {
    let uploaded = tool == tools::DRUG_PROPERTY && g.rng.gen_bool(0.4);
    let memory = if uploaded { uploaded_memory(g) } else { IndexMap::new() };
    let mut b = SampleBuilder::new(registry, memory);
    let draft = g.draft(tool, uploaded);
    b.single(&draft);
    b.finish()
}

fn error_turn(g: &mut Gen, tool: &str) -> TcddSample {
    let mut b = SampleBuilder::new(ToolRegistry::standard(), IndexMap::new());
    let draft = g.draft(tool, false);
    let bad = g.corrupt(&draft.action);
    b.human(&draft.text);
    b.call(&bad);
    let obs = b.call(&draft.action);
    b.answer(tool, &obs);
    b.finish()
}

/// Two or three chained turns; later turns consume earlier results.
fn multi_turn(g: &mut Gen, variant: usize) -> TcddSample {
    let memory = if variant % 3 == 1 { uploaded_memory(g) } else { IndexMap::new() };
    let mut b = SampleBuilder::new(ToolRegistry::standard(), memory);
    match variant % 3 {
        0 => {
            let gen = g.draft(tools::DRUG_GENERATION, false);
            b.human(&gen.text);
            let obs = b.call(&gen.action);
            b.answer(tools::DRUG_GENERATION, &obs);
            let p = g.pick(&ALL_PROPERTIES);
            b.human(&format!("Now predict the {} of the generated molecules.", property_phrase(p)));
            let prop = ActionInput::new(tools::DRUG_PROPERTY)
                .memory_ref("drug_smiles", "result_drug_generation")
                .literal("property", ParameterValue::text(p));
            let obs2 = b.call(&prop);
            b.answer(tools::DRUG_PROPERTY, &obs2);
            if g.rng.gen_bool(0.6) {
                let Observation::Ok { payload } = &obs else { unreachable!("generation succeeds") };
                let first = payload[0].as_str().expect("smiles").to_string();
                let opt = g.optimization(&first);
                b.single(&opt);
            }
        }
        1 => {
            let p = g.pick(&ALL_PROPERTIES);
            b.human(&format!("Predict the {} of the molecules I uploaded.", property_phrase(p)));
            let prop = ActionInput::new(tools::DRUG_PROPERTY)
                .memory_ref("drug_smiles", "user_smiles")
                .literal("property", ParameterValue::text(p));
            let obs = b.call(&prop);
            b.answer(tools::DRUG_PROPERTY, &obs);
            b.human("Suggest synthesis routes for those uploaded molecules.");
            let path = ActionInput::new(tools::SYNTHETIC_PATH).memory_ref("drug_smiles", "user_smiles");
            let obs = b.call(&path);
            b.answer(tools::SYNTHETIC_PATH, &obs);
        }
        _ => {
            let syn = g.draft(tools::SYNTHETIC_PATH, false);
            b.single(&syn);
            let p = g.pick(&ALL_PROPERTIES);
            b.human(&format!("What is the {} of the same molecules?", property_phrase(p)));
            let prop = ActionInput::new(tools::DRUG_PROPERTY)
                .memory_ref("drug_smiles", "input_drug_smiles")
                .literal("property", ParameterValue::text(p));
            let obs = b.call(&prop);
            b.answer(tools::DRUG_PROPERTY, &obs);
            let pair = [tools::DRUG_TARGET_INTERACTION, tools::DRUG_DRUG_INTERACTION, tools::DRUG_CELL_RESPONSE];
            let tool = g.pick(&pair);
            let d = g.draft(tool, false);
            b.single(&d);
        }
    }
    b.finish()
}

/// The shipped fixture sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixtures {
    pub train: Vec<TcddSample>,
    pub simple: Vec<TcddSample>,
    pub multiple: Vec<TcddSample>,
    pub multi_turn: Vec<TcddSample>,
}

pub const FIXTURE_SEED: u64 = 20_240_917;

/// Deterministic synthetic fixtures: a 40-sample training set (half single
/// turn, 30% multi-turn, 20% with a corrected erroneous call) and 100
/// evaluation samples per category.
pub fn generate_fixtures(seed: u64) -> Fixtures {
    let mut g = Gen { rng: ChaCha8Rng::seed_from_u64(seed) };
    let standard = ToolRegistry::standard();
    let tool_at = |i: usize| tools::TOOL_NAMES[i % tools::TOOL_NAMES.len()];

    let mut train = Vec::with_capacity(40);
    for i in 0..20 {
        train.push(single_turn(&mut g, tool_at(i), standard.clone()));
    }
    for i in 0..12 {
        train.push(multi_turn(&mut g, i));
    }
    for i in 0..8 {
        train.push(error_turn(&mut g, tool_at(i)));
    }

    let simple = (0..100)
        .map(|i| {
            let tool = tool_at(i);
            single_turn(&mut g, tool, standard.subset([tool]))
        })
        .collect();
    let multiple = (0..100).map(|i| single_turn(&mut g, tool_at(i), standard.clone())).collect();
    let multi_turn = (0..100).map(|i| multi_turn(&mut g, i)).collect();
    Fixtures { train, simple, multiple, multi_turn }
}

impl Fixtures {
    pub fn files(&self) -> [(&'static str, &[TcddSample]); 4] {
        [
            ("train.json", &self.train),
            ("eval_simple.json", &self.simple),
            ("eval_multiple.json", &self.multiple),
            ("eval_multi_turn.json", &self.multi_turn),
        ]
    }

    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        std::fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.display().to_string(), source })?;
        for (name, samples) in self.files() {
            export(samples, &dir.join(name))?;
        }
        Ok(())
    }
}
