use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{AgentRole, CallContext, CompletionBackend, GatewayError, GenerationRequest, GenerationResult};

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub task_id: String,
    pub agent_role: AgentRole,
    pub ordinal: u32,
    pub response: String,
}

/// Scripted responses for one task, in the order the agents will ask.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTrace {
    pub task_id: String,
    pub responses: Vec<(AgentRole, String)>,
}

impl ScriptedTrace {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            responses: Vec::new(),
        }
    }

    pub fn push(&mut self, role: AgentRole, response: impl Into<String>) -> &mut Self {
        self.responses.push((role, response.into()));
        self
    }

    pub fn to_records(&self) -> Vec<TraceRecord> {
        let mut ordinals: HashMap<AgentRole, u32> = HashMap::new();
        self.responses
            .iter()
            .map(|(role, text)| {
                let ordinal = ordinals.entry(*role).or_insert(0);
                let record = TraceRecord {
                    task_id: self.task_id.clone(),
                    agent_role: *role,
                    ordinal: *ordinal,
                    response: text.clone(),
                };
                *ordinal += 1;
                record
            })
            .collect()
    }
}

type CursorKey = (String, AgentRole);

/// Replays recorded completions. Every (task, agent) pair has its own
/// queue and cursor, so concurrent tasks never consume each other's
/// responses and the replay is independent of scheduling.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queues: HashMap<CursorKey, Vec<String>>,
    cursors: Mutex<HashMap<CursorKey, usize>>,
}

impl ScriptedBackend {
    pub fn from_records(records: impl IntoIterator<Item = TraceRecord>) -> Result<Self, GatewayError> {
        let mut staged: HashMap<CursorKey, Vec<(u32, String)>> = HashMap::new();
        for r in records {
            staged.entry((r.task_id, r.agent_role)).or_default().push((r.ordinal, r.response));
        }
        let mut queues = HashMap::with_capacity(staged.len());
        for (key, mut entries) in staged {
            entries.sort_by_key(|(ordinal, _)| *ordinal);
            if entries.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(GatewayError::TraceLoad(format!(
                    "duplicate ordinal for task {}, agent {}",
                    key.0, key.1
                )));
            }
            queues.insert(key, entries.into_iter().map(|(_, text)| text).collect());
        }
        Ok(Self {
            queues,
            cursors: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_traces(traces: &[ScriptedTrace]) -> Result<Self, GatewayError> {
        Self::from_records(traces.iter().flat_map(ScriptedTrace::to_records))
    }

    /// Loads a line-delimited trace file of [`TraceRecord`]s.
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path).map_err(|e| GatewayError::TraceLoad(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TraceRecord = serde_json::from_str(line)
                .map_err(|e| GatewayError::TraceLoad(format!("{} line {}: {e}", path.display(), idx + 1)))?;
            records.push(record);
        }
        Self::from_records(records)
    }

    /// Responses not yet consumed for a task and role.
    pub fn remaining(&self, task_id: &str, role: AgentRole) -> usize {
        let key = (task_id.to_owned(), role);
        let total = self.queues.get(&key).map_or(0, Vec::len);
        let used = self.cursors.lock().expect("cursor lock").get(&key).copied().unwrap_or(0);
        total.saturating_sub(used)
    }
}

pub fn write_trace_records(records: &[TraceRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("trace record serialises") + "\n")
        .collect()
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, ctx: CallContext<'_>, request: &GenerationRequest) -> Result<GenerationResult, GatewayError> {
        request.validate()?;
        let key = (ctx.task_id.to_owned(), ctx.role);
        let exhausted = || GatewayError::TraceExhausted {
            task_id: ctx.task_id.to_owned(),
            agent_role: ctx.role,
        };
        let queue = self.queues.get(&key).ok_or_else(exhausted)?;
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let cursor = cursors.entry(key).or_insert(0);
        let text = queue.get(*cursor).ok_or_else(exhausted)?.clone();
        *cursor += 1;
        Ok(GenerationResult {
            text,
            usage: None,
            latency_ms: 0,
        })
    }
}
