//! Tolerant extraction of actions and final answers from raw model text.
//!
//! Fine-tuned models drift from the required output format: extra
//! whitespace, duplicated `Answer:` prefixes, single-quoted or otherwise
//! broken delimiters, code fences, prose around the payload. The parser
//! tries a fixed recovery ladder and takes the first candidate that yields
//! an action:
//!
//! 1. strict JSON on the prefix-stripped text
//! 2. contents of fenced code blocks
//! 3. balanced `{...}` spans found by scanning
//! 4. all of the above again after delimiter normalization
//!
//! Memory references (`"(user_smiles)"`) are detected on whole argument
//! values only, after literal extraction.

use std::fmt;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::pmp::KeyToken;
use crate::value::ParameterValue;

pub const DEFAULT_FINAL_MARKER: &str = "Final Answer:";

#[derive(Debug, Clone, PartialEq)]
pub enum Argument {
    Literal(ParameterValue),
    MemoryRef(KeyToken),
}

impl Argument {
    pub fn to_json(&self) -> Value {
        match self {
            Argument::Literal(v) => v.to_json(),
            Argument::MemoryRef(k) => Value::String(format!("({k})")),
        }
    }
}

/// A tool call: tool name plus arguments in emission order.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionInput {
    pub tool: String,
    pub arguments: IndexMap<String, Argument>,
}

impl ActionInput {
    pub fn new(tool: impl Into<String>) -> Self {
        ActionInput { tool: tool.into(), arguments: IndexMap::new() }
    }

    pub fn literal(mut self, name: &str, value: ParameterValue) -> Self {
        self.arguments.insert(name.to_string(), Argument::Literal(value));
        self
    }

    pub fn memory_ref(mut self, name: &str, key: &str) -> Self {
        let key = KeyToken::new(key).expect("well-formed key");
        self.arguments.insert(name.to_string(), Argument::MemoryRef(key));
        self
    }

    pub fn memory_refs(&self) -> impl Iterator<Item = (&str, &KeyToken)> {
        self.arguments.iter().filter_map(|(n, a)| match a {
            Argument::MemoryRef(k) => Some((n.as_str(), k)),
            Argument::Literal(_) => None,
        })
    }

    /// `{"name": ..., "arguments": {...}}` with arguments in declaration order.
    pub fn to_json(&self) -> Value {
        let args: Map<String, Value> = self.arguments.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
        let mut obj = Map::new();
        obj.insert("name".into(), Value::String(self.tool.clone()));
        obj.insert("arguments".into(), Value::Object(args));
        Value::Object(obj)
    }

    /// Compact canonical rendering.
    pub fn render(&self) -> String {
        self.to_json().to_string()
    }

    /// Strict reading of the canonical rendering (no recovery).
    pub fn from_canonical(text: &str) -> Option<ActionInput> {
        let v: Value = serde_json::from_str(text.trim()).ok()?;
        let obj = v.as_object()?;
        if obj.len() != 2 {
            return None;
        }
        let tool = obj.get("name")?.as_str()?;
        let args = obj.get("arguments")?.as_object()?;
        if tool.is_empty() {
            return None;
        }
        Some(ActionInput {
            tool: tool.to_string(),
            arguments: args.iter().map(|(k, v)| (k.clone(), classify_argument(v))).collect(),
        })
    }
}

impl fmt::Display for ActionInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for ActionInput {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActionInput {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        ActionInput::from_canonical(&v.to_string())
            .ok_or_else(|| serde::de::Error::custom("expected {\"name\": ..., \"arguments\": {...}}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ModelTurn {
    Action(ActionInput),
    FinalAnswer(String),
    Unparseable(String),
}

/// Parenthesized key, e.g. `(user_smiles)`, as the whole trimmed value.
pub fn memory_ref(text: &str) -> Option<KeyToken> {
    let inner = text.trim().strip_prefix('(')?.strip_suffix(')')?;
    KeyToken::new(inner).ok()
}

pub fn classify_argument(v: &Value) -> Argument {
    if let Some(key) = v.as_str().and_then(memory_ref) {
        return Argument::MemoryRef(key);
    }
    Argument::Literal(ParameterValue::from_json(v))
}

#[derive(Debug, Clone)]
pub struct Parser {
    final_marker: String,
}

impl Default for Parser {
    fn default() -> Self {
        Parser { final_marker: DEFAULT_FINAL_MARKER.to_string() }
    }
}

/// Parses with the default `Final Answer:` marker.
pub fn parse_turn(raw: &str) -> ModelTurn {
    Parser::default().parse_turn(raw)
}

fn prefix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:\s*(?:final\s+answer|answer|action\s+input|function\s+call|tool\s+call)\s*[:：]\s*)+")
            .unwrap()
    })
}

fn react_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)Action\s*:\s*`?([A-Za-z_][A-Za-z0-9_]*)`?\s*Action\s+Input\s*:\s*(.*)").unwrap())
}

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\r?\n?(.*?)```").unwrap())
}

impl Parser {
    pub fn with_final_marker(marker: impl Into<String>) -> Self {
        Parser { final_marker: marker.into() }
    }

    pub fn final_marker(&self) -> &str {
        &self.final_marker
    }

    pub fn parse_turn(&self, raw: &str) -> ModelTurn {
        if let Some(action) = find_action(raw) {
            return ModelTurn::Action(action);
        }
        if let Some(idx) = raw.rfind(self.final_marker.as_str()) {
            let answer = raw[idx + self.final_marker.len()..].trim();
            return ModelTurn::FinalAnswer(answer.to_string());
        }
        let reason = if raw.trim().is_empty() {
            "empty output".to_string()
        } else if raw.contains('{') {
            "output contains no well-formed action JSON with a tool name and arguments".to_string()
        } else {
            format!("output contains neither an action nor a {:?} marker", self.final_marker)
        };
        ModelTurn::Unparseable(reason)
    }
}

fn candidates(raw: &str) -> Vec<String> {
    let trimmed = raw.trim();
    let stripped = prefix_re().replace(trimmed, "");
    let mut out = vec![stripped.trim().to_string()];
    for cap in fence_re().captures_iter(raw) {
        out.push(cap[1].trim().to_string());
    }
    out.extend(balanced_spans(raw).into_iter().map(str::to_string));
    out.dedup();
    out
}

fn find_action(raw: &str) -> Option<ActionInput> {
    let cands = candidates(raw);
    cands
        .iter()
        .find_map(|c| strict_action(c))
        .or_else(|| {
            let normalized = normalize_delimiters(raw);
            cands
                .iter()
                .map(|c| normalize_delimiters(c))
                .chain(candidates(&normalized))
                .find_map(|c| strict_action(&c))
        })
        .or_else(|| react_action(raw))
}

fn strict_action(text: &str) -> Option<ActionInput> {
    let v: Value = serde_json::from_str(text).ok()?;
    action_from_value(&v)
}

fn action_from_value(v: &Value) -> Option<ActionInput> {
    let obj = match v {
        Value::Object(o) => o,
        Value::Array(items) if items.len() == 1 => return action_from_value(&items[0]),
        _ => return None,
    };
    // {"function": {"name": ..., "arguments": ...}}
    if let Some(inner @ Value::Object(_)) = obj.get("function") {
        return action_from_value(inner);
    }
    let tool = ["name", "tool", "function", "action", "tool_name"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_str))?
        .trim();
    if tool.is_empty() {
        return None;
    }
    let args = ["arguments", "parameters", "args", "action_input", "input"]
        .iter()
        .find_map(|k| obj.get(*k));
    let arguments = match args {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(Value::String(s)) => args_from_text(s)?,
        Some(_) => return None,
    };
    Some(ActionInput {
        tool: tool.to_string(),
        arguments: arguments.iter().map(|(k, v)| (k.trim().to_string(), classify_argument(v))).collect(),
    })
}

fn args_from_text(s: &str) -> Option<Map<String, Value>> {
    let parse = |t: &str| serde_json::from_str::<Value>(t.trim()).ok().and_then(|v| v.as_object().cloned());
    parse(s)
        .or_else(|| parse(&normalize_delimiters(s)))
        .or_else(|| balanced_spans(s).into_iter().find_map(parse))
        .or_else(|| {
            let n = normalize_delimiters(s);
            balanced_spans(&n).into_iter().find_map(parse)
        })
}

fn react_action(raw: &str) -> Option<ActionInput> {
    let cap = react_re().captures(raw)?;
    let arguments = args_from_text(&cap[2])?;
    Some(ActionInput {
        tool: cap[1].to_string(),
        arguments: arguments.iter().map(|(k, v)| (k.trim().to_string(), classify_argument(v))).collect(),
    })
}

/// Top-level `{...}` spans, aware of both quote styles.
fn balanced_spans(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = scan_balanced(bytes, i) {
                spans.push(&text[i..end]);
                i = end;
                continue;
            }
        }
        i += 1;
    }
    spans
}

fn scan_balanced(bytes: &[u8], start: usize) -> Option<usize> {
    let mut stack: Vec<u8> = Vec::new();
    let mut quote: Option<u8> = None;
    let mut escape = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if let Some(q) = quote {
            if escape {
                escape = false;
            } else if b == b'\\' {
                escape = true;
            } else if b == q {
                quote = None;
            }
            continue;
        }
        match b {
            b'"' | b'\'' => quote = Some(b),
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(start + offset + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// Repairs common delimiter faults: smart quotes, single-quoted strings,
/// trailing commas, Python literals and bare object keys.
pub fn normalize_delimiters(text: &str) -> String {
    let text: String = text
        .chars()
        .map(|c| match c {
            '\u{201c}' | '\u{201d}' => '"',
            '\u{2018}' | '\u{2019}' => '\'',
            _ => c,
        })
        .collect();
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    let next_non_ws = |from: usize| chars[from..].iter().copied().find(|c| !c.is_whitespace());
    while i < chars.len() {
        let c = chars[i];
        match c {
            '"' => {
                out.push('"');
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    out.push(d);
                    i += 1;
                    if d == '\\' && i < chars.len() {
                        out.push(chars[i]);
                        i += 1;
                    } else if d == '"' {
                        break;
                    }
                }
            }
            '\'' => {
                out.push('"');
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    i += 1;
                    match d {
                        '\\' if i < chars.len() && chars[i] == '\'' => {
                            out.push('\'');
                            i += 1;
                        }
                        '\\' if i < chars.len() => {
                            out.push('\\');
                            out.push(chars[i]);
                            i += 1;
                        }
                        '"' => out.push_str("\\\""),
                        '\'' => {
                            out.push('"');
                            break;
                        }
                        _ => out.push(d),
                    }
                }
            }
            ',' if matches!(next_non_ws(i + 1), Some('}') | Some(']')) => i += 1,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let ident: String = chars[start..i].iter().collect();
                let after_digit = start > 0 && chars[start - 1].is_ascii_digit();
                match ident.as_str() {
                    "True" => out.push_str("true"),
                    "False" => out.push_str("false"),
                    "None" => out.push_str("null"),
                    _ if !after_digit && next_non_ws(i) == Some(':') && inside_object(&out) => {
                        out.push('"');
                        out.push_str(&ident);
                        out.push('"');
                    }
                    _ => out.push_str(&ident),
                }
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

fn inside_object(prefix: &str) -> bool {
    matches!(prefix.trim_end().chars().last(), Some('{') | Some(','))
}

/// Mutations of a clean rendering covering the tolerated fault classes.
pub mod faults {
    use super::ActionInput;

    /// Named faulty variants of `action`'s canonical rendering.
    pub fn mutations(action: &ActionInput) -> Vec<(&'static str, String)> {
        let compact = action.render();
        let pretty = serde_json::to_string_pretty(&action.to_json()).expect("serializes");
        let single = compact.replace('"', "'");
        let trailing = add_trailing_commas(&compact);
        let args_string = {
            let mut obj = serde_json::Map::new();
            obj.insert("name".into(), serde_json::Value::String(action.tool.clone()));
            let args = action.to_json()["arguments"].to_string();
            obj.insert("arguments".into(), serde_json::Value::String(args));
            serde_json::Value::Object(obj).to_string()
        };
        vec![
            ("leading_whitespace", format!("   \n\n\t{compact}")),
            ("trailing_whitespace", format!("{compact}  \n\n  ")),
            ("surrounding_whitespace", format!("\n\n  {compact}\n\n")),
            ("pretty_indented", pretty.clone()),
            ("doubled_newlines", pretty.replace('\n', "\n\n")),
            ("tab_indentation", tab_pretty(&action.to_json())),
            ("spaced_delimiters", spaced(&action.to_json())),
            ("crlf_line_endings", pretty.replace('\n', "\r\n")),
            ("answer_prefix", format!("Answer: {compact}")),
            ("duplicate_answer_prefix", format!("Answer: Answer: {compact}")),
            ("duplicate_answer_lines", format!("Answer:\n\nAnswer:\n{pretty}")),
            ("duplicate_final_answer_prefix", format!("Final Answer: Final Answer: {compact}")),
            ("action_input_prefix", format!("Action Input: {compact}")),
            ("single_quotes", single.clone()),
            ("trailing_commas", trailing.clone()),
            ("smart_quotes", smart_quotes(&compact)),
            ("json_fence", format!("```json\n{pretty}\n```")),
            ("bare_fence", format!("```\n{compact}\n```")),
            ("prose_before", format!("I will call the tool now.\n{compact}")),
            ("prose_after", format!("{compact}\nThis call will return the prediction.")),
            ("prose_and_fence", format!("Here's the call:\n```json\n{compact}\n```\nLet me know if you need more.")),
            ("combined_quotes_commas_prefix", format!("Answer: Answer: {}", add_trailing_commas(&single))),
            ("arguments_as_string", args_string),
            ("fenced_single_quotes", format!("```json\n{single}\n```")),
        ]
    }

    fn tab_pretty(v: &serde_json::Value) -> String {
        use serde::Serialize;
        let mut buf = Vec::new();
        let fmt = serde_json::ser::PrettyFormatter::with_indent(b"\t");
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
        v.serialize(&mut ser).expect("serializes");
        String::from_utf8(buf).expect("utf-8")
    }

    fn spaced(v: &serde_json::Value) -> String {
        use serde_json::Value;
        match v {
            Value::Object(m) => {
                let items: Vec<String> =
                    m.iter().map(|(k, v)| format!("{}  :   {}", Value::String(k.clone()), spaced(v))).collect();
                format!("{{  {}  }}", items.join("  ,   "))
            }
            Value::Array(a) => {
                let items: Vec<String> = a.iter().map(spaced).collect();
                format!("[ {} ]", items.join(" ,  "))
            }
            other => other.to_string(),
        }
    }

    fn add_trailing_commas(s: &str) -> String {
        s.replace("\"]", "\",]").replace("']", "',]").replace('}', ",}").replace("{,}", "{}")
    }

    fn smart_quotes(s: &str) -> String {
        let mut open = true;
        s.chars()
            .map(|c| {
                if c == '"' {
                    let q = if open { '\u{201c}' } else { '\u{201d}' };
                    open = !open;
                    q
                } else {
                    c
                }
            })
            .collect()
    }
}
