//! Per-session event log with live fan-out.

use std::sync::Mutex;

use pilot_core::AgentEvent;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    pub payload: Value,
}

/// Append-only log. Sequence numbers start at 0 and have no gaps.
pub struct EventLog {
    log: Mutex<Vec<Event>>,
    live: broadcast::Sender<Event>,
}

impl Default for EventLog {
    fn default() -> Self {
        let (live, _) = broadcast::channel(1024);
        EventLog { log: Mutex::new(Vec::new()), live }
    }
}

impl EventLog {
    pub fn emit(&self, kind: &str, query_id: Option<&str>, payload: Value) -> Event {
        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        let event = Event {
            seq: log.len() as u64,
            kind: kind.to_string(),
            query_id: query_id.map(str::to_string),
            payload,
        };
        log.push(event.clone());
        // Sent under the lock so live order matches seq order.
        let _ = self.live.send(event.clone());
        event
    }

    pub fn emit_agent(&self, query_id: &str, event: &AgentEvent) -> Event {
        let mut value = serde_json::to_value(event).expect("agent events serialize");
        let kind = value
            .as_object_mut()
            .and_then(|o| o.shift_remove("kind"))
            .and_then(|k| k.as_str().map(str::to_string))
            .unwrap_or_else(|| "unknown".to_string());
        self.emit(&kind, Some(query_id), value)
    }

    /// Events with `seq >= from`, plus a receiver for everything after them.
    pub fn subscribe_from(&self, from: u64) -> (Vec<Event>, broadcast::Receiver<Event>) {
        let log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        let rx = self.live.subscribe();
        let backlog = log.iter().skip(from as usize).cloned().collect();
        (backlog, rx)
    }

    pub fn since(&self, from: u64) -> Vec<Event> {
        self.subscribe_from(from).0
    }

    pub fn len(&self) -> u64 {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
