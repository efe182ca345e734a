//! Parameter payloads moved between the user, the memory pool and the tools.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::smiles::validate_smiles;

/// Objectives and constraints for the generation/optimization tools.
pub type ConditionMap = IndexMap<String, ParameterValue>;

/// A typed parameter instance.
///
/// The serialized form is `{"type": "...", "data": ...}`, which is also the
/// value encoding of the persisted pool document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "snake_case")]
pub enum ParameterValue {
    Text(String),
    Number(f64),
    DrugList(Vec<String>),
    PairList(Vec<(String, String)>),
    ToolResult { tool: String, payload: Value },
    #[serde(rename = "condition_map")]
    Conditions(ConditionMap),
}

impl ParameterValue {
    pub fn drug_list<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ParameterValue::DrugList(items.into_iter().map(Into::into).collect())
    }

    pub fn text(s: impl Into<String>) -> Self {
        ParameterValue::Text(s.into())
    }

    /// Short variant tag, matching the `type` field of the serialized form.
    pub fn type_name(&self) -> &'static str {
        match self {
            ParameterValue::Text(_) => "text",
            ParameterValue::Number(_) => "number",
            ParameterValue::DrugList(_) => "drug_list",
            ParameterValue::PairList(_) => "pair_list",
            ParameterValue::ToolResult { .. } => "tool_result",
            ParameterValue::Conditions(_) => "condition_map",
        }
    }

    /// Checks the structural invariants of the variant.
    pub fn check(&self) -> Result<(), String> {
        match self {
            ParameterValue::Number(n) if !n.is_finite() => {
                Err(format!("number must be finite, got {n}"))
            }
            ParameterValue::DrugList(items) => {
                for (i, s) in items.iter().enumerate() {
                    validate_smiles(s).map_err(|e| format!("drug {i} ({s:?}): {e}"))?;
                }
                Ok(())
            }
            ParameterValue::PairList(pairs) => {
                for (i, (a, b)) in pairs.iter().enumerate() {
                    if a.is_empty() || b.is_empty() {
                        return Err(format!("pair {i} has an empty element"));
                    }
                }
                Ok(())
            }
            ParameterValue::ToolResult { tool, .. } if tool.is_empty() => {
                Err("tool result without a tool name".to_string())
            }
            ParameterValue::Conditions(map) => {
                for (k, v) in map {
                    v.check().map_err(|e| format!("condition {k}: {e}"))?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Plain JSON form, as a tool or a model sees the value.
    pub fn to_json(&self) -> Value {
        match self {
            ParameterValue::Text(s) => Value::String(s.clone()),
            ParameterValue::Number(n) if n.fract() == 0.0 && n.abs() < 9.0e15 => Value::from(*n as i64),
            ParameterValue::Number(n) => serde_json::Number::from_f64(*n)
                .map(Value::Number)
                .unwrap_or(Value::Null),
            ParameterValue::DrugList(items) => {
                Value::Array(items.iter().cloned().map(Value::String).collect())
            }
            ParameterValue::PairList(pairs) => Value::Array(
                pairs
                    .iter()
                    .map(|(a, b)| Value::Array(vec![Value::String(a.clone()), Value::String(b.clone())]))
                    .collect(),
            ),
            ParameterValue::ToolResult { payload, .. } => payload.clone(),
            ParameterValue::Conditions(map) => Value::Object(
                map.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
            ),
        }
    }

    /// Infers a value from plain JSON by shape.
    ///
    /// Strings become `Text`, numbers `Number`, arrays of strings `DrugList`,
    /// arrays of two-string arrays `PairList`, objects `Conditions`. Anything
    /// else is kept as its JSON text so a later type check can report it.
    pub fn from_json(v: &Value) -> ParameterValue {
        match v {
            Value::String(s) => ParameterValue::Text(s.clone()),
            Value::Number(n) => match n.as_f64() {
                Some(f) => ParameterValue::Number(f),
                None => ParameterValue::Text(n.to_string()),
            },
            Value::Array(items) => {
                if let Some(strings) = items
                    .iter()
                    .map(|x| x.as_str().map(str::to_string))
                    .collect::<Option<Vec<_>>>()
                {
                    return ParameterValue::DrugList(strings);
                }
                if let Some(pairs) = items.iter().map(as_pair).collect::<Option<Vec<_>>>() {
                    return ParameterValue::PairList(pairs);
                }
                ParameterValue::Text(v.to_string())
            }
            Value::Object(map) => ParameterValue::Conditions(
                map.iter()
                    .map(|(k, v)| (k.clone(), ParameterValue::from_json(v)))
                    .collect(),
            ),
            Value::Bool(_) | Value::Null => ParameterValue::Text(v.to_string()),
        }
    }
}

fn as_pair(v: &Value) -> Option<(String, String)> {
    match v.as_array()?.as_slice() {
        [a, b] => Some((a.as_str()?.to_string(), b.as_str()?.to_string())),
        _ => None,
    }
}
