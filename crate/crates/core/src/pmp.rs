//! Parameterized memory pool.
//!
//! A session-scoped key/value store where each key owns a stack of
//! [`ParameterValue`] instances. Writing to an existing key appends; reading
//! always yields the newest instance. The model only ever sees the key list
//! (see [`MemoryPool::render_key_prompt`]); tools receive the values.

use std::fmt;
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::value::ParameterValue;

pub const MAX_KEY_LEN: usize = 64;
const KEY_PROMPT_PREFIX: &str = "Current memory pool keys: ";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoolError {
    #[error("malformed key {0:?}: keys are lowercase snake_case, 1-64 characters")]
    MalformedKey(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("key not found: {0}")]
    KeyNotFound(String),
    #[error("corrupt pool document: {0}")]
    CorruptDocument(String),
}

/// A pool key: `[a-z][a-z0-9_]*`, 1 to 64 characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct KeyToken(String);

impl KeyToken {
    pub fn new(name: impl Into<String>) -> Result<Self, PoolError> {
        let name = name.into();
        if Self::is_well_formed(&name) {
            Ok(KeyToken(name))
        } else {
            Err(PoolError::MalformedKey(name))
        }
    }

    pub fn is_well_formed(name: &str) -> bool {
        let bytes = name.as_bytes();
        !bytes.is_empty()
            && bytes.len() <= MAX_KEY_LEN
            && bytes[0].is_ascii_lowercase()
            && bytes
                .iter()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || *b == b'_')
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for KeyToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for KeyToken {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for KeyToken {
    type Error = PoolError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        KeyToken::new(value)
    }
}

impl From<KeyToken> for String {
    fn from(k: KeyToken) -> String {
        k.0
    }
}

impl std::str::FromStr for KeyToken {
    type Err = PoolError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KeyToken::new(s)
    }
}

/// Per-key summary used by listings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotSummary {
    pub key: KeyToken,
    #[serde(rename = "type")]
    pub type_name: &'static str,
    pub depth: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryPool {
    entries: IndexMap<KeyToken, Vec<ParameterValue>>,
    revision: u64,
}

#[derive(Serialize, Deserialize)]
struct PoolDocument {
    revision: u64,
    entries: Vec<DocumentEntry>,
}

#[derive(Serialize, Deserialize)]
struct DocumentEntry {
    key: KeyToken,
    stack: Vec<ParameterValue>,
}

impl MemoryPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Appends `value` to the key's stack, creating the slot if needed.
    pub fn put(&mut self, key: &KeyToken, value: ParameterValue) -> Result<u64, PoolError> {
        value.check().map_err(PoolError::InvalidValue)?;
        self.entries.entry(key.clone()).or_default().push(value);
        Ok(self.bump())
    }

    /// Same as [`put`](Self::put) but takes an unchecked key string.
    pub fn put_str(&mut self, key: &str, value: ParameterValue) -> Result<u64, PoolError> {
        let key = KeyToken::new(key)?;
        self.put(&key, value)
    }

    /// Newest instance stored under `key`.
    pub fn resolve(&self, key: &str) -> Result<&ParameterValue, PoolError> {
        self.entries
            .get(key)
            .and_then(|stack| stack.last())
            .ok_or_else(|| PoolError::KeyNotFound(key.to_string()))
    }

    /// Whole stack, oldest first.
    pub fn stack(&self, key: &str) -> Result<&[ParameterValue], PoolError> {
        self.entries
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| PoolError::KeyNotFound(key.to_string()))
    }

    /// Replaces the newest instance only.
    pub fn update(&mut self, key: &str, value: ParameterValue) -> Result<u64, PoolError> {
        value.check().map_err(PoolError::InvalidValue)?;
        let top = self
            .entries
            .get_mut(key)
            .and_then(|stack| stack.last_mut())
            .ok_or_else(|| PoolError::KeyNotFound(key.to_string()))?;
        *top = value;
        Ok(self.bump())
    }

    /// Removes the whole slot.
    pub fn delete(&mut self, key: &str) -> Result<u64, PoolError> {
        self.entries
            .shift_remove(key)
            .ok_or_else(|| PoolError::KeyNotFound(key.to_string()))?;
        Ok(self.bump())
    }

    pub fn list_keys(&self) -> Vec<KeyToken> {
        self.entries.keys().cloned().collect()
    }

    pub fn summaries(&self) -> Vec<SlotSummary> {
        self.entries
            .iter()
            .map(|(key, stack)| SlotSummary {
                key: key.clone(),
                type_name: stack.last().map_or("empty", ParameterValue::type_name),
                depth: stack.len(),
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&KeyToken, &[ParameterValue])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// `Current memory pool keys: [k1, k2, ...]`, in insertion order.
    ///
    /// Length depends on the keys only, never on the stored values.
    pub fn render_key_prompt(&self) -> String {
        let keys: Vec<&str> = self.entries.keys().map(KeyToken::as_str).collect();
        format!("{KEY_PROMPT_PREFIX}[{}]", keys.join(", "))
    }

    pub fn persist(&self) -> String {
        let doc = PoolDocument {
            revision: self.revision,
            entries: self
                .entries
                .iter()
                .map(|(key, stack)| DocumentEntry { key: key.clone(), stack: stack.clone() })
                .collect(),
        };
        serde_json::to_string(&doc).expect("pool document serializes")
    }

    pub fn restore(document: &str) -> Result<Self, PoolError> {
        let doc: PoolDocument = serde_json::from_str(document)
            .map_err(|e| PoolError::CorruptDocument(e.to_string()))?;
        let mut entries = IndexMap::with_capacity(doc.entries.len());
        for DocumentEntry { key, stack } in doc.entries {
            if stack.is_empty() {
                return Err(PoolError::CorruptDocument(format!("key {key} has an empty stack")));
            }
            for v in &stack {
                v.check()
                    .map_err(|e| PoolError::CorruptDocument(format!("key {key}: {e}")))?;
            }
            if entries.insert(key.clone(), stack).is_some() {
                return Err(PoolError::CorruptDocument(format!("duplicate key {key}")));
            }
        }
        Ok(MemoryPool { entries, revision: doc.revision })
    }

    fn bump(&mut self) -> u64 {
        self.revision += 1;
        self.revision
    }
}

/// A pool shared between a running agent and external editors.
///
/// Mutations are serialized by the lock; each call is atomic.
#[derive(Debug, Clone, Default)]
pub struct SharedPool(Arc<RwLock<MemoryPool>>);

impl SharedPool {
    pub fn new(pool: MemoryPool) -> Self {
        SharedPool(Arc::new(RwLock::new(pool)))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, MemoryPool> {
        self.0.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, MemoryPool> {
        self.0.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn snapshot(&self) -> MemoryPool {
        self.read().clone()
    }
}
