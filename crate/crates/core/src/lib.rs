//! Runtime for tool-calling agents in drug discovery.
//!
//! Large parameters live in a session [`pmp::MemoryPool`] and the model
//! passes them by key. Malformed or invalid tool calls are fed back to the
//! model together with the original task ([`fefo`]). The [`eval`] module
//! scores tool selection and parameter extraction.

pub mod agent;
pub mod clock;
pub mod dataset;
pub mod eval;
pub mod fefo;
pub mod llm;
pub mod parser;
pub mod pmp;
pub mod smiles;
pub mod tools;
pub mod value;

pub use agent::{Agent, AgentConfig, AgentEvent, Budget, Failure, QueryOutcome, Session, StepTrace};
pub use clock::Clock;
pub use llm::{BackendConfig, ChatBackend, ChatMessage};
pub use parser::{ActionInput, Argument, ModelTurn};
pub use pmp::{KeyToken, MemoryPool, PoolError, SharedPool};
pub use tools::{Observation, ToolRegistry};
pub use value::ParameterValue;
