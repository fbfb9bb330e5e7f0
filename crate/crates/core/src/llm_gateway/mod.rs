//! Uniform completion interface over a live OpenAI-compatible endpoint and
//! a scripted replay backend, plus helpers that pull code and test payloads
//! out of free-form completions.

mod extract;
mod live;
mod mock;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_code_block, extract_test_suite, MAX_TEST_INPUT_BYTES};
pub use live::{OpenAiCompatibleBackend, RetryPolicy, ENDPOINT_ENV, API_KEY_ENV, MODEL_ENV};
pub use mock::{write_trace_records, ScriptedBackend, ScriptedTrace, TraceRecord};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("trace exhausted for task {task_id}, agent {agent_role}")]
    TraceExhausted { task_id: String, agent_role: AgentRole },
    #[error("cannot load traces: {0}")]
    TraceLoad(String),
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider rejected request ({status}): {body}")]
    Provider { status: u16, body: String },
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
    #[error("malformed test payload: {0}")]
    MalformedTestPayload(String),
    #[error("test payload category {category} has {found} tests, expected {expected}")]
    Cardinality {
        category: String,
        found: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    FeedbackIntegrator,
    TestDesigner,
    Programmer,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::FeedbackIntegrator => "feedback_integrator",
            AgentRole::TestDesigner => "test_designer",
            AgentRole::Programmer => "programmer",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "feedback_integrator" => Ok(AgentRole::FeedbackIntegrator),
            "test_designer" => Ok(AgentRole::TestDesigner),
            "programmer" => Ok(AgentRole::Programmer),
            other => Err(format!("unknown agent role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }
}

/// Sampling settings attached to every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl SamplingParams {
    /// Code generation samples at 0.8; reflection and test design stay
    /// near-greedy at 0.1. Nucleus 0.95 everywhere.
    pub fn for_role(role: AgentRole) -> Self {
        match role {
            AgentRole::Programmer => Self {
                temperature: 0.8,
                top_p: 0.95,
                max_tokens: 2048,
            },
            AgentRole::FeedbackIntegrator | AgentRole::TestDesigner => Self {
                temperature: 0.1,
                top_p: 0.95,
                max_tokens: 1024,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub stop_sequences: Vec<String>,
}

impl GenerationRequest {
    pub fn new(messages: Vec<ChatMessage>, params: SamplingParams) -> Self {
        Self {
            messages,
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
            stop_sequences: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(m.to_owned()));
        match self.messages.last() {
            None => return bad("messages must be non-empty"),
            Some(m) if m.role != MessageRole::User => return bad("last message must come from the user"),
            _ => {}
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must lie in (0, 1]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    /// The full prompt as one text block, for audit logs and run records.
    pub fn rendered(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let role = match m.role {
                MessageRole::System => "system",
                MessageRole::User => "user",
                MessageRole::Assistant => "assistant",
            };
            out.push_str(&format!("[{role}]\n{}\n", m.content));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub usage: Option<Usage>,
    pub latency_ms: u64,
}

/// Which task and agent a completion belongs to. The scripted backend keys
/// its replay cursors on this; the live backend only uses it for logging.
#[derive(Debug, Clone, Copy)]
pub struct CallContext<'a> {
    pub task_id: &'a str,
    pub role: AgentRole,
}

pub trait CompletionBackend: Send + Sync {
    /// Exactly one completion per call; text is returned verbatim.
    fn complete(&self, ctx: CallContext<'_>, request: &GenerationRequest) -> Result<GenerationResult, GatewayError>;
}
