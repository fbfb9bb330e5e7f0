//! Sandboxed execution of candidate programs against test vectors, with
//! judge-style verdict classification.

mod output;
mod process;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench_ingest::{RepairTask, TestVector};

pub use output::compare_output;
use process::{run_process, ProcessEnd, ProcessRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Passed,
    WrongAnswer,
    RuntimeError,
    CompilationError,
    TimeLimitExceeded,
    MemoryLimitExceeded,
}

impl Verdict {
    pub const ALL: [Verdict; 6] = [
        Verdict::Passed,
        Verdict::WrongAnswer,
        Verdict::RuntimeError,
        Verdict::CompilationError,
        Verdict::TimeLimitExceeded,
        Verdict::MemoryLimitExceeded,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Passed => "PASSED",
            Verdict::WrongAnswer => "WRONG_ANSWER",
            Verdict::RuntimeError => "RUNTIME_ERROR",
            Verdict::CompilationError => "COMPILATION_ERROR",
            Verdict::TimeLimitExceeded => "TIME_LIMIT_EXCEEDED",
            Verdict::MemoryLimitExceeded => "MEMORY_LIMIT_EXCEEDED",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Verdict::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| format!("unknown verdict label {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("interpreter {0:?} not found on this host")]
    InterpreterMissing(String),
    #[error("empty interpreter command")]
    EmptyCommand,
    #[error("sandbox setup failed: {0}")]
    Setup(#[from] std::io::Error),
}

/// How the memory limit is enforced on the child process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryEnforcement {
    /// `RLIMIT_AS` on the child. Allocations beyond the cap fail inside the
    /// interpreter, which reports them on stderr.
    AddressSpace,
    /// Resident-set polling of the child's process group with a kill once
    /// the cap is crossed. Used where address-space limits are unavailable
    /// or break the interpreter (for example VM-based runtimes that reserve
    /// large virtual ranges up front).
    Monitor,
}

/// Per-language knobs: how to run a program, how to syntax-check it, and
/// which stderr markers identify syntax and allocation failures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub name: String,
    pub source_file_name: String,
    pub syntax_check_args: Vec<String>,
    pub syntax_error_markers: Vec<String>,
    pub memory_error_markers: Vec<String>,
}

impl LanguageProfile {
    pub fn ruby() -> Self {
        Self {
            name: "ruby".into(),
            source_file_name: "main.rb".into(),
            syntax_check_args: vec!["-c".into()],
            syntax_error_markers: vec!["SyntaxError".into(), "syntax error".into()],
            memory_error_markers: vec![
                "NoMemoryError".into(),
                "failed to allocate memory".into(),
                "Cannot allocate memory".into(),
            ],
        }
    }

    pub fn python() -> Self {
        Self {
            name: "python".into(),
            source_file_name: "main.py".into(),
            syntax_check_args: vec!["-m".into(), "py_compile".into()],
            syntax_error_markers: vec!["SyntaxError".into(), "IndentationError".into()],
            memory_error_markers: vec!["MemoryError".into(), "Cannot allocate memory".into()],
        }
    }

    pub fn for_language(language: &str) -> Option<Self> {
        match language.to_ascii_lowercase().as_str() {
            "ruby" => Some(Self::ruby()),
            "python" | "python3" => Some(Self::python()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxPolicy {
    pub time_limit_ms: u64,
    pub memory_limit_kb: u64,
    pub output_cap_bytes: usize,
    /// Program plus leading arguments, whitespace separated.
    pub interpreter_command: String,
    pub memory_enforcement: MemoryEnforcement,
    pub language: LanguageProfile,
}

pub const DEFAULT_TIME_LIMIT_MS: u64 = 2000;
pub const DEFAULT_MEMORY_LIMIT_KB: u64 = 262_144;
pub const DEFAULT_OUTPUT_CAP_BYTES: usize = 256 * 1024;
/// Slack allowed between the wall-clock limit and the observed kill.
pub const KILL_GRACE_MS: u64 = 500;

impl Default for SandboxPolicy {
    fn default() -> Self {
        Self {
            time_limit_ms: DEFAULT_TIME_LIMIT_MS,
            memory_limit_kb: DEFAULT_MEMORY_LIMIT_KB,
            output_cap_bytes: DEFAULT_OUTPUT_CAP_BYTES,
            interpreter_command: "ruby".into(),
            memory_enforcement: MemoryEnforcement::AddressSpace,
            language: LanguageProfile::ruby(),
        }
    }
}

impl SandboxPolicy {
    /// Same interpreter settings, limits taken from the task.
    pub fn for_task(&self, task: &RepairTask) -> Self {
        let mut policy = self.clone();
        if task.context.time_limit_ms > 0 {
            policy.time_limit_ms = task.context.time_limit_ms;
        }
        if task.context.memory_limit_kb > 0 {
            policy.memory_limit_kb = task.context.memory_limit_kb;
        }
        policy
    }

    fn command_parts(&self) -> Result<Vec<String>, ExecError> {
        let parts: Vec<String> = self.interpreter_command.split_whitespace().map(str::to_owned).collect();
        if parts.is_empty() {
            return Err(ExecError::EmptyCommand);
        }
        Ok(parts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ExitStatus {
    Code(i32),
    Signal(i32),
    TimedOut,
    MemoryKilled,
    /// The program was not executed (compilation failed).
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub verdict: Verdict,
    pub stdout: String,
    pub stderr: String,
    pub exit_status: ExitStatus,
    pub wall_ms: u64,
    pub input_echo: String,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRun {
    pub test: TestVector,
    pub record: ExecutionRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub records: Vec<TestRun>,
    pub all_passed: bool,
}

impl SuiteReport {
    pub fn new(records: Vec<TestRun>) -> Self {
        let all_passed = records.iter().all(|r| r.record.verdict == Verdict::Passed);
        Self { records, all_passed }
    }

    pub fn failures(&self) -> impl Iterator<Item = &TestRun> {
        self.records.iter().filter(|r| r.record.verdict != Verdict::Passed)
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        self.records.iter().map(|r| r.record.verdict).collect()
    }

    pub fn passed_count(&self) -> usize {
        self.records.iter().filter(|r| r.record.verdict == Verdict::Passed).count()
    }
}

/// Anything that can judge a program against a list of test vectors. The
/// repair loop only talks to this trait.
pub trait Executor: Send + Sync {
    fn run_suite(&self, source: &str, tests: &[TestVector], policy: &SandboxPolicy) -> Result<SuiteReport, ExecError>;
}

/// Runs programs as child processes of the host interpreter.
#[derive(Debug, Default, Clone, Copy)]
pub struct ProcessExecutor;

impl Executor for ProcessExecutor {
    fn run_suite(&self, source: &str, tests: &[TestVector], policy: &SandboxPolicy) -> Result<SuiteReport, ExecError> {
        run_suite(source, tests, policy)
    }
}

fn echo(input: &str, cap: usize) -> String {
    if input.len() <= cap {
        return input.to_owned();
    }
    let mut end = cap;
    while !input.is_char_boundary(end) {
        end -= 1;
    }
    input[..end].to_owned()
}

fn contains_any(haystack: &str, markers: &[String]) -> bool {
    markers.iter().any(|m| haystack.contains(m.as_str()))
}

/// Syntax-only check. `Ok(None)` means the source is accepted.
pub fn syntax_check(source: &str, policy: &SandboxPolicy) -> Result<Option<ExecutionRecord>, ExecError> {
    let mut args = policy.command_parts()?;
    args.extend(policy.language.syntax_check_args.iter().cloned());
    args.push(policy.language.source_file_name.clone());
    let end = run_process(ProcessRequest {
        args,
        source,
        source_file_name: &policy.language.source_file_name,
        stdin: "",
        time_limit_ms: policy.time_limit_ms.max(DEFAULT_TIME_LIMIT_MS),
        memory_limit_kb: policy.memory_limit_kb.max(DEFAULT_MEMORY_LIMIT_KB),
        memory_enforcement: policy.memory_enforcement,
        output_cap_bytes: policy.output_cap_bytes,
    })?;
    if matches!(end.status, ExitStatus::Code(0)) {
        return Ok(None);
    }
    Ok(Some(ExecutionRecord {
        verdict: Verdict::CompilationError,
        stdout: end.stdout,
        stderr: end.stderr,
        exit_status: end.status,
        wall_ms: end.wall_ms,
        input_echo: String::new(),
        stdout_truncated: end.stdout_truncated,
        stderr_truncated: end.stderr_truncated,
    }))
}

/// One fresh process per test vector, input on stdin.
pub fn run_once(source: &str, test: &TestVector, policy: &SandboxPolicy) -> Result<ExecutionRecord, ExecError> {
    let mut args = policy.command_parts()?;
    args.push(policy.language.source_file_name.clone());
    let end = run_process(ProcessRequest {
        args,
        source,
        source_file_name: &policy.language.source_file_name,
        stdin: &test.input,
        time_limit_ms: policy.time_limit_ms,
        memory_limit_kb: policy.memory_limit_kb,
        memory_enforcement: policy.memory_enforcement,
        output_cap_bytes: policy.output_cap_bytes,
    })?;
    let verdict = classify(&end, test, policy);
    Ok(ExecutionRecord {
        verdict,
        stdout: end.stdout,
        stderr: end.stderr,
        exit_status: end.status,
        wall_ms: end.wall_ms,
        input_echo: echo(&test.input, policy.output_cap_bytes),
        stdout_truncated: end.stdout_truncated,
        stderr_truncated: end.stderr_truncated,
    })
}

fn classify(end: &ProcessEnd, test: &TestVector, policy: &SandboxPolicy) -> Verdict {
    match end.status {
        ExitStatus::TimedOut => Verdict::TimeLimitExceeded,
        ExitStatus::MemoryKilled => Verdict::MemoryLimitExceeded,
        ExitStatus::NotRun => Verdict::CompilationError,
        ExitStatus::Code(0) => {
            if !end.stdout_truncated && compare_output(&end.stdout, &test.expected_output) {
                Verdict::Passed
            } else {
                Verdict::WrongAnswer
            }
        }
        ExitStatus::Code(_) | ExitStatus::Signal(_) => {
            if contains_any(&end.stderr, &policy.language.memory_error_markers) {
                Verdict::MemoryLimitExceeded
            } else if contains_any(&end.stderr, &policy.language.syntax_error_markers) {
                Verdict::CompilationError
            } else {
                Verdict::RuntimeError
            }
        }
    }
}

/// Syntax check once, then every test in order. A rejected program gives
/// every test the compilation verdict without running anything.
pub fn run_suite(source: &str, tests: &[TestVector], policy: &SandboxPolicy) -> Result<SuiteReport, ExecError> {
    if let Some(rejected) = syntax_check(source, policy)? {
        let records = tests
            .iter()
            .map(|test| TestRun {
                test: test.clone(),
                record: ExecutionRecord {
                    exit_status: ExitStatus::NotRun,
                    input_echo: echo(&test.input, policy.output_cap_bytes),
                    ..rejected.clone()
                },
            })
            .collect();
        return Ok(SuiteReport::new(records));
    }
    let mut records = Vec::with_capacity(tests.len());
    for test in tests {
        let record = run_once(source, test, policy)?;
        records.push(TestRun {
            test: test.clone(),
            record,
        });
    }
    Ok(SuiteReport::new(records))
}
