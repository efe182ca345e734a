//! Tool registry, argument validation and deterministic stub executors.
//!
//! The eight drug-discovery tools are backed by pure functions of their
//! canonicalized arguments (FNV-1a-64 based), so whole pipelines run and
//! replay bit-for-bit without any real prediction model.

use std::collections::BTreeMap;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub use crate::smiles::{validate_smiles, SmilesFault};
use crate::value::{ConditionMap, ParameterValue};

pub const DRUG_PROPERTY: &str = "drug_property";
pub const DRUG_CELL_RESPONSE: &str = "drug_cell_response";
pub const DRUG_TARGET_AFFINITY: &str = "drug_target_affinity";
pub const DRUG_TARGET_INTERACTION: &str = "drug_target_interaction";
pub const DRUG_DRUG_INTERACTION: &str = "drug_drug_interaction";
pub const DRUG_GENERATION: &str = "drug_generation";
pub const DRUG_OPTIMIZATION: &str = "drug_optimization";
pub const SYNTHETIC_PATH: &str = "synthetic_path";

pub const TOOL_NAMES: [&str; 8] = [
    DRUG_PROPERTY,
    DRUG_CELL_RESPONSE,
    DRUG_TARGET_AFFINITY,
    DRUG_TARGET_INTERACTION,
    DRUG_DRUG_INTERACTION,
    DRUG_GENERATION,
    DRUG_OPTIMIZATION,
    SYNTHETIC_PATH,
];

/// Regression properties with their output ranges, then classification ones.
pub const REG_PROPERTIES: [(&str, f64, f64); 3] =
    [("esol", -10.0, 2.0), ("freesolv", -25.0, 5.0), ("lipo", -1.5, 4.5)];
pub const CLS_PROPERTIES: [&str; 2] = ["bace", "bbbp"];

/// Keys accepted inside a condition map.
pub const CONDITION_KEYS: [&str; 4] = ["count", "target_property", "direction", "reference_smiles"];
const MAX_GENERATION_COUNT: f64 = 1000.0;

const CELL_RESPONSE_RANGE: (f64, f64) = (-5.0, 10.0);
const AFFINITY_RANGE: (f64, f64) = (4.0, 11.0);

const REACTION_STEPS: [&str; 8] = [
    "amide_coupling",
    "suzuki_coupling",
    "reductive_amination",
    "esterification",
    "boc_deprotection",
    "grignard_addition",
    "wittig_reaction",
    "hydrogenation",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    DrugList,
    Smiles,
    Text,
    Number,
    PairList,
    ConditionMap,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::DrugList => "drug_list",
            ParamKind::Smiles => "smiles",
            ParamKind::Text => "text",
            ParamKind::Number => "number",
            ParamKind::PairList => "pair_list",
            ParamKind::ConditionMap => "condition_map",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "drug_list" => ParamKind::DrugList,
            "smiles" => ParamKind::Smiles,
            "text" => ParamKind::Text,
            "number" => ParamKind::Number,
            "pair_list" => ParamKind::PairList,
            "condition_map" => ParamKind::ConditionMap,
            _ => return None,
        })
    }

    fn json_schema(self) -> Value {
        match self {
            ParamKind::DrugList => json!({"type": "array", "items": {"type": "string"}}),
            ParamKind::Smiles | ParamKind::Text => json!({"type": "string"}),
            ParamKind::Number => json!({"type": "number"}),
            ParamKind::PairList => json!({
                "type": "array",
                "items": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2}
            }),
            ParamKind::ConditionMap => json!({"type": "object"}),
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
    pub required: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("duplicate tool name {0}")]
    DuplicateTool(String),
    #[error("tool {tool}: required parameter {param} is not declared")]
    UndeclaredRequired { tool: String, param: String },
    #[error("malformed tool schema: {0}")]
    Malformed(String),
}

impl ToolSchema {
    fn new(name: &str, description: &str, params: &[(&str, ParamKind, &str)], required: &[&str]) -> Self {
        ToolSchema {
            name: name.to_string(),
            description: description.to_string(),
            parameters: params
                .iter()
                .map(|(n, k, d)| ParamSpec { name: n.to_string(), kind: *k, description: d.to_string() })
                .collect(),
            required: required.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn is_required(&self, name: &str) -> bool {
        self.required.iter().any(|r| r == name)
    }

    fn check(&self) -> Result<(), SchemaError> {
        for r in &self.required {
            if self.param(r).is_none() {
                return Err(SchemaError::UndeclaredRequired { tool: self.name.clone(), param: r.clone() });
            }
        }
        Ok(())
    }

    /// `{"name", "description", "parameters": {"type": "object", "properties", "required"}}`.
    ///
    /// Each property carries its JSON Schema type plus `format` set to the
    /// parameter kind, which is what [`from_json`](Self::from_json) reads back.
    pub fn to_json(&self) -> Value {
        let mut properties = Map::new();
        for p in &self.parameters {
            let mut prop = p.kind.json_schema();
            prop["format"] = json!(p.kind.as_str());
            prop["description"] = json!(p.description);
            properties.insert(p.name.clone(), prop);
        }
        json!({
            "name": self.name,
            "description": self.description,
            "parameters": {
                "type": "object",
                "properties": properties,
                "required": self.required,
            }
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, SchemaError> {
        let bad = |what: &str| SchemaError::Malformed(what.to_string());
        let name = v["name"].as_str().ok_or_else(|| bad("missing name"))?;
        let description = v["description"].as_str().unwrap_or_default();
        let params = &v["parameters"];
        let properties = params["properties"].as_object().ok_or_else(|| bad("missing properties"))?;
        let mut parameters = Vec::with_capacity(properties.len());
        for (pname, prop) in properties {
            let kind = prop["format"]
                .as_str()
                .and_then(ParamKind::parse)
                .ok_or_else(|| SchemaError::Malformed(format!("{name}.{pname}: unknown parameter format")))?;
            parameters.push(ParamSpec {
                name: pname.clone(),
                kind,
                description: prop["description"].as_str().unwrap_or_default().to_string(),
            });
        }
        let required = match &params["required"] {
            Value::Null => Vec::new(),
            Value::Array(items) => items
                .iter()
                .map(|x| x.as_str().map(str::to_string).ok_or_else(|| bad("required entries must be strings")))
                .collect::<Result<_, _>>()?,
            _ => return Err(bad("required must be an array")),
        };
        let schema = ToolSchema { name: name.to_string(), description: description.to_string(), parameters, required };
        schema.check()?;
        Ok(schema)
    }
}

/// Immutable set of tool schemas, keyed by name in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolRegistry {
    tools: IndexMap<String, ToolSchema>,
}

impl ToolRegistry {
    pub fn from_schemas(schemas: Vec<ToolSchema>) -> Result<Self, SchemaError> {
        let mut tools = IndexMap::with_capacity(schemas.len());
        for s in schemas {
            s.check()?;
            if tools.contains_key(&s.name) {
                return Err(SchemaError::DuplicateTool(s.name));
            }
            tools.insert(s.name.clone(), s);
        }
        Ok(ToolRegistry { tools })
    }

    /// The eight drug-discovery tools.
    pub fn standard() -> Self {
        Self::from_schemas(registry_schemas()).expect("built-in schemas are consistent")
    }

    pub fn get(&self, name: &str) -> Option<&ToolSchema> {
        self.tools.get(name)
    }

    pub fn schemas(&self) -> impl Iterator<Item = &ToolSchema> {
        self.tools.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Registry restricted to `names` (unknown names are skipped).
    pub fn subset<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Self {
        let tools = names
            .into_iter()
            .filter_map(|n| self.tools.get(n).map(|s| (n.to_string(), s.clone())))
            .collect();
        ToolRegistry { tools }
    }

    /// Serialized schema list, the `tools` field of a dataset sample.
    pub fn to_tools_json(&self) -> String {
        let list: Vec<Value> = self.schemas().map(ToolSchema::to_json).collect();
        serde_json::to_string(&list).expect("schemas serialize")
    }

    pub fn from_tools_json(text: &str) -> Result<Self, SchemaError> {
        let list: Vec<Value> =
            serde_json::from_str(text).map_err(|e| SchemaError::Malformed(e.to_string()))?;
        Self::from_schemas(list.iter().map(ToolSchema::from_json).collect::<Result<_, _>>()?)
    }
}

/// The eight tool schemas, in stable order.
pub fn registry_schemas() -> Vec<ToolSchema> {
    use ParamKind::*;
    vec![
        ToolSchema::new(
            DRUG_PROPERTY,
            "Predict a molecular property for a list of drugs. Regression properties: esol (aqueous solubility), freesolv (hydration free energy), lipo (lipophilicity). Classification properties: bace (BACE-1 inhibition), bbbp (blood-brain barrier penetration).",
            &[
                ("drug_smiles", DrugList, "List of drug SMILES strings."),
                ("property", Text, "Property to predict: one of bace, bbbp, esol, freesolv, lipo."),
            ],
            &["drug_smiles", "property"],
        ),
        ToolSchema::new(
            DRUG_CELL_RESPONSE,
            "Predict the response (ln IC50) of cancer cell lines to drugs.",
            &[("drug_cell_pairs", PairList, "List of [drug SMILES, cell line name] pairs.")],
            &["drug_cell_pairs"],
        ),
        ToolSchema::new(
            DRUG_TARGET_AFFINITY,
            "Predict the binding affinity (pKd) between drugs and target proteins.",
            &[("drug_target_pairs", PairList, "List of [drug SMILES, target protein sequence] pairs.")],
            &["drug_target_pairs"],
        ),
        ToolSchema::new(
            DRUG_TARGET_INTERACTION,
            "Predict whether drugs interact with target proteins (1 = interaction, 0 = none).",
            &[("drug_target_pairs", PairList, "List of [drug SMILES, target protein sequence] pairs.")],
            &["drug_target_pairs"],
        ),
        ToolSchema::new(
            DRUG_DRUG_INTERACTION,
            "Predict interactions between pairs of drugs. Classification by default; task reg returns an interaction score.",
            &[
                ("drug_pairs", PairList, "List of [drug SMILES, drug SMILES] pairs."),
                ("task", Text, "Optional: cls (default) or reg."),
            ],
            &["drug_pairs"],
        ),
        ToolSchema::new(
            DRUG_GENERATION,
            "Generate new drug candidates satisfying the given conditions.",
            &[(
                "conditions",
                ConditionMap,
                "Generation conditions: count (number of molecules), target_property, direction (maximize or minimize), reference_smiles.",
            )],
            &["conditions"],
        ),
        ToolSchema::new(
            DRUG_OPTIMIZATION,
            "Optimize a drug molecule under the given conditions.",
            &[
                ("drug_smiles", Smiles, "SMILES of the drug to optimize."),
                (
                    "conditions",
                    ConditionMap,
                    "Optimization conditions: target_property, direction (maximize or minimize), reference_smiles.",
                ),
            ],
            &["drug_smiles", "conditions"],
        ),
        ToolSchema::new(
            SYNTHETIC_PATH,
            "Plan a synthetic pathway for each drug.",
            &[("drug_smiles", DrugList, "List of drug SMILES strings.")],
            &["drug_smiles"],
        ),
    ]
}

/// A problem found while checking arguments against a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum ArgumentFault {
    MissingRequired { name: String },
    UnexpectedParameter { name: String },
    TypeMismatch { name: String, expected: ParamKind, found: String },
    InvalidValue { name: String, reason: String },
}

impl fmt::Display for ArgumentFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgumentFault::MissingRequired { name } => write!(f, "missing required parameter: {name}"),
            ArgumentFault::UnexpectedParameter { name } => write!(f, "unexpected parameter: {name}"),
            ArgumentFault::TypeMismatch { name, expected, found } => {
                write!(f, "type mismatch for parameter {name}: expected {expected}, found {found}")
            }
            ArgumentFault::InvalidValue { name, reason } => write!(f, "invalid value for parameter {name}: {reason}"),
        }
    }
}

/// Coerces `value` into the declared kind, or explains why it does not fit.
///
/// The only coercion is an empty list, which parses as a drug list but is
/// equally a valid (empty) pair list.
pub fn conform(name: &str, kind: ParamKind, value: &ParameterValue) -> Result<ParameterValue, ArgumentFault> {
    let mismatch = || ArgumentFault::TypeMismatch {
        name: name.to_string(),
        expected: kind,
        found: value.type_name().to_string(),
    };
    let invalid = |reason: String| ArgumentFault::InvalidValue { name: name.to_string(), reason };
    match (kind, value) {
        (ParamKind::DrugList, ParameterValue::DrugList(_))
        | (ParamKind::PairList, ParameterValue::PairList(_))
        | (ParamKind::Text, ParameterValue::Text(_)) => {
            value.check().map_err(invalid)?;
            Ok(value.clone())
        }
        (ParamKind::Number, ParameterValue::Number(_)) => {
            value.check().map_err(invalid)?;
            Ok(value.clone())
        }
        (ParamKind::PairList, ParameterValue::DrugList(items)) if items.is_empty() => {
            Ok(ParameterValue::PairList(Vec::new()))
        }
        (ParamKind::Smiles, ParameterValue::Text(s)) => {
            validate_smiles(s).map_err(|e| invalid(e.to_string()))?;
            Ok(value.clone())
        }
        (ParamKind::ConditionMap, ParameterValue::Conditions(map)) => {
            check_conditions(map).map_err(invalid)?;
            Ok(value.clone())
        }
        _ => Err(mismatch()),
    }
}

fn check_conditions(map: &ConditionMap) -> Result<(), String> {
    for (k, v) in map {
        match (k.as_str(), v) {
            ("count", ParameterValue::Number(n)) => {
                if n.fract() != 0.0 || *n < 1.0 || *n > MAX_GENERATION_COUNT {
                    return Err(format!("count must be an integer in 1..={MAX_GENERATION_COUNT}, got {n}"));
                }
            }
            ("target_property", ParameterValue::Text(s)) if !s.trim().is_empty() => {}
            ("direction", ParameterValue::Text(s)) if s == "maximize" || s == "minimize" => {}
            ("direction", _) => return Err("direction must be \"maximize\" or \"minimize\"".to_string()),
            ("reference_smiles", ParameterValue::Text(s)) => {
                validate_smiles(s).map_err(|e| format!("reference_smiles: {e}"))?;
            }
            (key, _) if CONDITION_KEYS.contains(&key) => {
                return Err(format!("condition {key} has the wrong type ({})", v.type_name()));
            }
            (key, _) => {
                return Err(format!("unknown condition {key:?}; expected one of {}", CONDITION_KEYS.join(", ")));
            }
        }
    }
    Ok(())
}

/// Checks `args` against `schema`; an empty result means the call is valid.
///
/// Missing required parameters are reported first (schema order), then
/// per-argument faults in argument order.
pub fn validate_arguments(schema: &ToolSchema, args: &IndexMap<String, ParameterValue>) -> Vec<ArgumentFault> {
    let mut faults: Vec<ArgumentFault> = schema
        .required
        .iter()
        .filter(|r| !args.contains_key(r.as_str()))
        .map(|r| ArgumentFault::MissingRequired { name: r.clone() })
        .collect();
    for (name, value) in args {
        match schema.param(name) {
            None => faults.push(ArgumentFault::UnexpectedParameter { name: name.clone() }),
            Some(spec) => {
                if let Err(fault) = conform(name, spec.kind, value) {
                    faults.push(fault);
                }
            }
        }
    }
    faults
}

/// Result of a tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Observation {
    Ok { payload: Value },
    Error { message: String },
}

impl Observation {
    pub fn error(message: impl Into<String>) -> Self {
        Observation::Error { message: message.into() }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Observation::Ok { .. })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("observation serializes")
    }
}

/// The pool value a successful call is stored as.
///
/// Molecule-producing tools store a plain drug list so the result can feed
/// the next tool directly; everything else is kept as a tool result.
pub fn result_value(tool: &str, payload: &Value) -> ParameterValue {
    if tool == DRUG_GENERATION || tool == DRUG_OPTIMIZATION {
        if let Some(items) = payload
            .as_array()
            .and_then(|a| a.iter().map(|x| x.as_str().map(str::to_string)).collect::<Option<Vec<_>>>())
        {
            return ParameterValue::DrugList(items);
        }
    }
    ParameterValue::ToolResult { tool: tool.to_string(), payload: payload.clone() }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// FNV-1a-64 of `tool || 0x1f || canonical_args`.
pub fn stub_hash(tool: &str, canonical_args: &str) -> u64 {
    let mut bytes = Vec::with_capacity(tool.len() + 1 + canonical_args.len());
    bytes.extend_from_slice(tool.as_bytes());
    bytes.push(0x1f);
    bytes.extend_from_slice(canonical_args.as_bytes());
    fnv1a64(&bytes)
}

/// Deterministic value in `[0, 1)`: the top 53 bits of [`stub_hash`] over 2^53.
pub fn stub_value(tool: &str, canonical_args: &str) -> f64 {
    (stub_hash(tool, canonical_args) >> 11) as f64 / (1u64 << 53) as f64
}

/// Sorted-key compact JSON of the arguments' plain values.
pub fn canonical_args(args: &IndexMap<String, ParameterValue>) -> String {
    let sorted: BTreeMap<&str, Value> = args.iter().map(|(k, v)| (k.as_str(), sorted_json(&v.to_json()))).collect();
    serde_json::to_string(&sorted).expect("arguments serialize")
}

fn sorted_json(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k.clone(), sorted_json(v))).collect())
        }
        Value::Array(items) => Value::Array(items.iter().map(sorted_json).collect()),
        other => other.clone(),
    }
}

fn single_arg(name: &str, value: ParameterValue) -> String {
    let mut m = IndexMap::new();
    m.insert(name.to_string(), value);
    canonical_args(&m)
}

fn scaled(v: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + v * (hi - lo)
}

fn args_get<'a>(args: &'a IndexMap<String, ParameterValue>, name: &str) -> Result<&'a ParameterValue, String> {
    args.get(name).ok_or_else(|| format!("missing required parameter: {name}"))
}

fn drug_list_arg<'a>(args: &'a IndexMap<String, ParameterValue>, name: &str) -> Result<&'a [String], String> {
    match args_get(args, name)? {
        ParameterValue::DrugList(items) if items.is_empty() => Err("empty drug list".to_string()),
        ParameterValue::DrugList(items) => Ok(items),
        other => Err(format!("{name} must be a drug list, got {}", other.type_name())),
    }
}

fn pair_list_arg<'a>(
    args: &'a IndexMap<String, ParameterValue>,
    name: &str,
    second_is_smiles: bool,
) -> Result<&'a [(String, String)], String> {
    let pairs = match args_get(args, name)? {
        ParameterValue::PairList(p) => p.as_slice(),
        ParameterValue::DrugList(items) if items.is_empty() => &[],
        other => return Err(format!("{name} must be a pair list, got {}", other.type_name())),
    };
    if pairs.is_empty() {
        return Err("empty pair list".to_string());
    }
    for (i, (a, b)) in pairs.iter().enumerate() {
        validate_smiles(a).map_err(|e| format!("pair {i}: invalid drug SMILES {a:?}: {e}"))?;
        if second_is_smiles {
            validate_smiles(b).map_err(|e| format!("pair {i}: invalid drug SMILES {b:?}: {e}"))?;
        }
    }
    Ok(pairs)
}

fn conditions_arg(args: &IndexMap<String, ParameterValue>) -> Result<&ConditionMap, String> {
    match args_get(args, "conditions")? {
        ParameterValue::Conditions(c) => {
            check_conditions(c)?;
            Ok(c)
        }
        other => Err(format!("conditions must be a condition map, got {}", other.type_name())),
    }
}

/// Runs the stub behind `schema`.
///
/// Callers are expected to have validated `args` first; anything the stub
/// still cannot handle comes back as an error observation.
pub fn execute(schema: &ToolSchema, args: &IndexMap<String, ParameterValue>) -> Observation {
    match run_stub(&schema.name, args) {
        Ok(payload) => Observation::Ok { payload },
        Err(message) => Observation::Error { message },
    }
}

fn run_stub(tool: &str, args: &IndexMap<String, ParameterValue>) -> Result<Value, String> {
    match tool {
        DRUG_PROPERTY => {
            let drugs = drug_list_arg(args, "drug_smiles")?;
            let property = match args_get(args, "property")? {
                ParameterValue::Text(p) => p.as_str(),
                other => return Err(format!("property must be text, got {}", other.type_name())),
            };
            let per_drug = |d: &String| {
                let mut m = IndexMap::new();
                m.insert("drug_smiles".to_string(), ParameterValue::DrugList(vec![d.clone()]));
                m.insert("property".to_string(), ParameterValue::text(property));
                canonical_args(&m)
            };
            if let Some((_, lo, hi)) = REG_PROPERTIES.iter().find(|(p, _, _)| *p == property) {
                Ok(drugs.iter().map(|d| json!(scaled(stub_value(tool, &per_drug(d)), (*lo, *hi)))).collect())
            } else if CLS_PROPERTIES.contains(&property) {
                Ok(drugs.iter().map(|d| json!(stub_hash(tool, &per_drug(d)) & 1)).collect())
            } else {
                Err(format!(
                    "unknown property {property:?}; expected one of bace, bbbp, esol, freesolv, lipo"
                ))
            }
        }
        DRUG_CELL_RESPONSE | DRUG_TARGET_AFFINITY | DRUG_TARGET_INTERACTION | DRUG_DRUG_INTERACTION => {
            let param = match tool {
                DRUG_CELL_RESPONSE => "drug_cell_pairs",
                DRUG_DRUG_INTERACTION => "drug_pairs",
                _ => "drug_target_pairs",
            };
            let pairs = pair_list_arg(args, param, tool == DRUG_DRUG_INTERACTION)?;
            let classify = match tool {
                DRUG_TARGET_INTERACTION => true,
                DRUG_DRUG_INTERACTION => match args.get("task") {
                    None => true,
                    Some(ParameterValue::Text(t)) if t == "cls" => true,
                    Some(ParameterValue::Text(t)) if t == "reg" => false,
                    Some(other) => return Err(format!("task must be \"cls\" or \"reg\", got {}", other.to_json())),
                },
                _ => false,
            };
            let values = pairs.iter().map(|p| {
                let canon = single_arg(param, ParameterValue::PairList(vec![p.clone()]));
                if classify {
                    json!(stub_hash(tool, &canon) & 1)
                } else {
                    let v = stub_value(tool, &canon);
                    match tool {
                        DRUG_CELL_RESPONSE => json!(scaled(v, CELL_RESPONSE_RANGE)),
                        DRUG_TARGET_AFFINITY => json!(scaled(v, AFFINITY_RANGE)),
                        _ => json!(v),
                    }
                }
            });
            Ok(Value::Array(values.collect()))
        }
        DRUG_GENERATION => {
            let conditions = conditions_arg(args)?;
            let count = match conditions.get("count") {
                Some(ParameterValue::Number(n)) => *n as usize,
                _ => return Err("conditions.count is required for generation".to_string()),
            };
            let canon = canonical_args(args);
            let molecules = (0..count).map(|i| {
                let v = stub_value(tool, &format!("{canon}#{i}"));
                json!("C".repeat(1 + (v * 20.0) as usize))
            });
            Ok(Value::Array(molecules.collect()))
        }
        DRUG_OPTIMIZATION => {
            let smiles = match args_get(args, "drug_smiles")? {
                ParameterValue::Text(s) => s,
                other => return Err(format!("drug_smiles must be a single SMILES, got {}", other.type_name())),
            };
            validate_smiles(smiles).map_err(|e| format!("invalid drug SMILES {smiles:?}: {e}"))?;
            conditions_arg(args)?;
            let k = 1 + (stub_value(tool, &canonical_args(args)) * 3.0) as usize;
            Ok(json!([format!("{smiles}{}", "C".repeat(k))]))
        }
        SYNTHETIC_PATH => {
            let drugs = drug_list_arg(args, "drug_smiles")?;
            let paths = drugs.iter().map(|d| {
                let h = stub_hash(tool, &single_arg("drug_smiles", ParameterValue::DrugList(vec![d.clone()])));
                let first = REACTION_STEPS[(h % 8) as usize];
                let second = REACTION_STEPS[((h >> 8) % 8) as usize];
                json!(format!("{d} => {first} => {second}"))
            });
            Ok(Value::Array(paths.collect()))
        }
        other => Err(format!("no executor for tool {other}")),
    }
}
