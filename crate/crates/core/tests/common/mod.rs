//! Scripted backends and a marker-driven executor for loop-level checks.
#![allow(dead_code)]

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use repair_forge::agents::{Agents, TemplateSet};
use repair_forge::bench_ingest::{ProblemContext, RepairTask, SampleIo, TestVector};
use repair_forge::executor::{
    ExecError, ExecutionRecord, ExitStatus, Executor, SandboxPolicy, SuiteReport, TestRun, Verdict,
};
use repair_forge::llm_gateway::{AgentRole, ScriptedBackend, ScriptedTrace};
use repair_forge::repair_loop::{LoopConfig, RepairEngine};

/// Generated-test inputs start with `g`, hidden ones with `h`. A program
/// passes generated tests iff it contains `PASS_G` and hidden tests iff it
/// contains `PASS_H`.
#[derive(Default)]
pub struct MarkerExecutor {
    pub generated_runs: AtomicU32,
    pub hidden_runs: AtomicU32,
}

impl MarkerExecutor {
    pub fn generated(&self) -> u32 {
        self.generated_runs.load(Ordering::SeqCst)
    }

    pub fn hidden(&self) -> u32 {
        self.hidden_runs.load(Ordering::SeqCst)
    }
}

impl Executor for MarkerExecutor {
    fn run_suite(&self, source: &str, tests: &[TestVector], _: &SandboxPolicy) -> Result<SuiteReport, ExecError> {
        let hidden = tests.first().is_some_and(|t| t.input.starts_with('h'));
        if hidden {
            self.hidden_runs.fetch_add(1, Ordering::SeqCst);
        } else {
            self.generated_runs.fetch_add(1, Ordering::SeqCst);
        }
        let pass = source.contains(if hidden { "PASS_H" } else { "PASS_G" });
        let runs = tests
            .iter()
            .map(|t| TestRun {
                test: t.clone(),
                record: ExecutionRecord {
                    verdict: if pass { Verdict::Passed } else { Verdict::WrongAnswer },
                    stdout: if pass { t.expected_output.clone() } else { "wrong\n".into() },
                    stderr: String::new(),
                    exit_status: ExitStatus::Code(0),
                    wall_ms: 0,
                    input_echo: t.input.clone(),
                    stdout_truncated: false,
                    stderr_truncated: false,
                },
            })
            .collect();
        Ok(SuiteReport::new(runs))
    }
}

pub fn task(id: &str, ground_truth: Option<&str>, difficulty: Option<u32>) -> RepairTask {
    RepairTask {
        task_id: id.to_owned(),
        context: ProblemContext {
            description: "Print twice the input.".into(),
            input_spec: "One integer.".into(),
            output_spec: "One integer.".into(),
            time_limit_ms: 1000,
            memory_limit_kb: 262_144,
            tags: vec!["math".into()],
            difficulty,
        },
        samples: SampleIo {
            pairs: vec![TestVector::new("3\n", "6\n")],
        },
        buggy_source: "puts gets.to_i * 3\n".into(),
        hidden_tests: vec![TestVector::new("h1\n", "2\n"), TestVector::new("h2\n", "4\n")],
        ground_truth_source: ground_truth.map(str::to_owned),
        original_outcome: Some(Verdict::WrongAnswer),
        subject_language: "ruby".into(),
    }
}

pub fn suite_payload() -> String {
    let pair = |i: usize| serde_json::json!({"input": format!("g{i}\n"), "output": "x\n"});
    serde_json::json!({"basic": [pair(0), pair(1)], "edge": [pair(2), pair(3)], "large": [pair(4), pair(5)]}).to_string()
}

/// Designer payload, then one reflection before each candidate.
pub fn trace(id: &str, candidates: &[&str]) -> ScriptedTrace {
    let mut tr = ScriptedTrace::new(id);
    tr.push(AgentRole::TestDesigner, suite_payload());
    for (i, c) in candidates.iter().enumerate() {
        tr.push(AgentRole::FeedbackIntegrator, format!("reflection {i}"));
        tr.push(AgentRole::Programmer, format!("```ruby\n# candidate {i}\n{c}\n```"));
    }
    tr
}

pub struct Harness {
    pub engine: RepairEngine,
    pub backend: Arc<ScriptedBackend>,
    pub exec: Arc<MarkerExecutor>,
}

pub fn harness(traces: &[ScriptedTrace], config: LoopConfig) -> Harness {
    let backend = Arc::new(ScriptedBackend::from_traces(traces).expect("valid traces"));
    let exec = Arc::new(MarkerExecutor::default());
    let agents = Agents::new(backend.clone(), Arc::new(TemplateSet::builtin()));
    Harness {
        engine: RepairEngine::new(agents, exec.clone(), SandboxPolicy::default(), config),
        backend,
        exec,
    }
}
