//! The per-task repair loop and its corpus-level driver.
//!
//! Iteration `t` runs from 0 to `budget_k` inclusive. Each iteration asks
//! the programmer for a candidate r_t, runs it against the generated suite
//! T_g and either stops (T_g passed, or budget spent) or folds the failures
//! into the next reflection. The hidden suite T_h is run once, on the
//! terminal candidate.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, Agents, Candidate, GeneratedTestSuite, PromptConfig, Reflection, RepairGuidance, TaskPrompt};
use crate::bench_ingest::RepairTask;
use crate::executor::{ExecError, Executor, SandboxPolicy, SuiteReport};

pub const DEFAULT_BUDGET_K: u32 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub budget_k: u32,
    pub enable_test_generation: bool,
    pub enable_first_reflection: bool,
    pub enable_self_reflection: bool,
    /// Run T_h after every candidate and stop at the first hidden pass.
    pub hidden_early_stop: bool,
    /// Record T_h results for every candidate without changing control flow.
    pub per_iteration_hidden_eval: bool,
    /// Keep iterating after a candidate passes T_g but fails T_h. Off by
    /// default; the standard loop treats a T_g pass as terminal.
    pub continue_after_false_positive: bool,
    pub prompt_config: PromptConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            budget_k: DEFAULT_BUDGET_K,
            enable_test_generation: true,
            enable_first_reflection: true,
            enable_self_reflection: true,
            hidden_early_stop: false,
            per_iteration_hidden_eval: false,
            continue_after_false_positive: false,
            prompt_config: PromptConfig::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.budget_k < 1 {
            return Err("budget_k must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Repaired,
    Fail,
    Errored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GeneratedTestsPassed,
    BudgetExhausted,
    HiddenEarlyStop,
    Error,
}

/// Wall-clock time per stage, in milliseconds. Kept apart from everything
/// else so that reports can drop it and stay byte-stable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub reflection_ms: u64,
    pub generation_ms: u64,
    pub execution_ms: u64,
    pub hidden_ms: u64,
}

impl StageTimings {
    pub fn add(&mut self, other: &StageTimings) {
        self.reflection_ms += other.reflection_ms;
        self.generation_ms += other.generation_ms;
        self.execution_ms += other.execution_ms;
        self.hidden_ms += other.hidden_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    /// The reflection r_t was conditioned on, if any.
    pub reflection: Option<Reflection>,
    pub candidate: Candidate,
    pub generated_suite_report: Option<SuiteReport>,
    pub hidden_suite_report: Option<SuiteReport>,
    pub timings: StageTimings,
}

impl IterationRecord {
    pub fn generated_passed(&self) -> Option<bool> {
        self.generated_suite_report.as_ref().map(|r| r.all_passed)
    }

    pub fn hidden_passed(&self) -> Option<bool> {
        self.hidden_suite_report.as_ref().map(|r| r.all_passed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub task_id: String,
    pub status: LoopStatus,
    pub final_candidate: Option<Candidate>,
    pub terminating_iteration: Option<u32>,
    pub termination_reason: TerminationReason,
    /// T_h result for the terminal candidate.
    pub hidden_report: Option<SuiteReport>,
    /// How many times T_h was executed for this task.
    pub hidden_executions: u32,
    /// How many times T_g was executed for this task.
    pub generated_executions: u32,
    pub generated_suite: Option<GeneratedTestSuite>,
    pub history: Vec<IterationRecord>,
    pub error: Option<String>,
    pub design_ms: u64,
}

impl LoopOutcome {
    pub fn solved(&self) -> bool {
        self.status == LoopStatus::Repaired
    }

    pub fn timings(&self) -> StageTimings {
        let mut total = StageTimings::default();
        for record in &self.history {
            total.add(&record.timings);
        }
        total
    }

    fn errored(task_id: &str, error: String, history: Vec<IterationRecord>, generated_suite: Option<GeneratedTestSuite>) -> Self {
        let (hidden_executions, generated_executions) = count_executions(&history);
        Self {
            task_id: task_id.to_owned(),
            status: LoopStatus::Errored,
            final_candidate: history.last().map(|r| r.candidate.clone()),
            terminating_iteration: history.last().map(|r| r.iteration),
            termination_reason: TerminationReason::Error,
            hidden_report: None,
            hidden_executions,
            generated_executions,
            generated_suite,
            history,
            error: Some(error),
            design_ms: 0,
        }
    }
}

fn count_executions(history: &[IterationRecord]) -> (u32, u32) {
    let hidden = history.iter().filter(|r| r.hidden_suite_report.is_some()).count() as u32;
    let generated = history.iter().filter(|r| r.generated_suite_report.is_some()).count() as u32;
    (hidden, generated)
}

#[derive(Debug, thiserror::Error)]
pub enum LoopError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("execution failed: {0}")]
    Exec(#[from] ExecError),
    #[error("invalid loop configuration: {0}")]
    Config(String),
}

fn ms_since(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

/// Agents, executor, sandbox defaults and loop configuration for a run.
#[derive(Clone)]
pub struct RepairEngine {
    pub agents: Agents,
    pub executor: Arc<dyn Executor>,
    pub base_policy: SandboxPolicy,
    pub config: LoopConfig,
    /// When set, one JSON run record per task is written here.
    pub record_dir: Option<PathBuf>,
}

impl std::fmt::Debug for RepairEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RepairEngine")
            .field("base_policy", &self.base_policy)
            .field("config", &self.config)
            .field("record_dir", &self.record_dir)
            .finish_non_exhaustive()
    }
}

impl RepairEngine {
    pub fn new(agents: Agents, executor: Arc<dyn Executor>, base_policy: SandboxPolicy, config: LoopConfig) -> Self {
        Self {
            agents,
            executor,
            base_policy,
            config,
            record_dir: None,
        }
    }

    fn task_prompt<'a>(task: &'a RepairTask) -> TaskPrompt<'a> {
        TaskPrompt {
            context: &task.context,
            samples: &task.samples,
            buggy_source: &task.buggy_source,
            language: &task.subject_language,
        }
    }

    /// Runs the loop for one task with a pre-built T_g (required when test
    /// generation is enabled, ignored otherwise).
    pub fn run_repair(&self, task: &RepairTask, suite: Option<&GeneratedTestSuite>) -> LoopOutcome {
        let mut history = Vec::new();
        match self.iterate(task, suite, &mut history) {
            Ok((status, reason, hidden)) => {
                let (hidden_executions, generated_executions) = count_executions(&history);
                let last = history.last().expect("at least one iteration ran");
                LoopOutcome {
                    task_id: task.task_id.clone(),
                    status,
                    final_candidate: Some(last.candidate.clone()),
                    terminating_iteration: Some(last.iteration),
                    termination_reason: reason,
                    hidden_report: Some(hidden),
                    hidden_executions,
                    generated_executions,
                    generated_suite: suite.filter(|_| self.config.enable_test_generation).cloned(),
                    history,
                    error: None,
                    design_ms: 0,
                }
            }
            Err(e) => LoopOutcome::errored(&task.task_id, e.to_string(), history, suite.cloned()),
        }
    }

    /// Designs T_g (when enabled) and then runs the loop. Never fails;
    /// errors become an `Errored` outcome.
    pub fn run_task(&self, task: &RepairTask) -> LoopOutcome {
        let mut suite = None;
        let mut design_ms = 0;
        if self.config.enable_test_generation {
            let start = Instant::now();
            match self.agents.design_tests(&task.task_id, &Self::task_prompt(task)) {
                Ok(s) => suite = Some(s),
                Err(e) => return LoopOutcome::errored(&task.task_id, e.to_string(), Vec::new(), None),
            }
            design_ms = ms_since(start);
        }
        let mut outcome = self.run_repair(task, suite.as_ref());
        outcome.design_ms = design_ms;
        outcome
    }

    /// T_h for the latest candidate, reusing a result already recorded for
    /// this iteration.
    fn hidden_for_last(&self, task: &RepairTask, policy: &SandboxPolicy, history: &mut [IterationRecord]) -> Result<SuiteReport, LoopError> {
        let last = history.last_mut().expect("at least one iteration ran");
        if let Some(report) = &last.hidden_suite_report {
            return Ok(report.clone());
        }
        let start = Instant::now();
        let report = self.executor.run_suite(&last.candidate.source, &task.hidden_tests, policy)?;
        last.timings.hidden_ms += ms_since(start);
        last.hidden_suite_report = Some(report.clone());
        Ok(report)
    }

    fn iterate(
        &self,
        task: &RepairTask,
        suite: Option<&GeneratedTestSuite>,
        history: &mut Vec<IterationRecord>,
    ) -> Result<(LoopStatus, TerminationReason, SuiteReport), LoopError> {
        let cfg = &self.config;
        cfg.validate().map_err(LoopError::Config)?;
        let generated_tests = if cfg.enable_test_generation {
            let suite = suite.ok_or_else(|| LoopError::Config("test generation enabled but no suite supplied".into()))?;
            Some(suite.vectors())
        } else {
            None
        };
        let prompt = Self::task_prompt(task);
        let policy = self.base_policy.for_task(task);
        let id = task.task_id.as_str();
        let pc = &cfg.prompt_config;
        let status_of = |report: &SuiteReport| if report.all_passed { LoopStatus::Repaired } else { LoopStatus::Fail };

        let mut timings = StageTimings::default();
        let mut reflection = None;
        if cfg.enable_first_reflection {
            let start = Instant::now();
            reflection = Some(self.agents.initial_reflection(id, &prompt, pc)?);
            timings.reflection_ms = ms_since(start);
        }
        let mut raw_feedback: Option<(Candidate, SuiteReport)> = None;

        for t in 0..=cfg.budget_k {
            let guidance = match (&reflection, &raw_feedback) {
                (Some(r), _) => RepairGuidance::Reflection(r),
                (None, Some((previous, report))) => RepairGuidance::RawVerdicts { previous, report },
                (None, None) => RepairGuidance::None,
            };
            let start = Instant::now();
            let candidate = self.agents.propose_repair(id, &prompt, guidance, pc, t)?;
            timings.generation_ms = ms_since(start);

            let generated_report = match &generated_tests {
                Some(tests) => {
                    let start = Instant::now();
                    let report = self.executor.run_suite(&candidate.source, tests, &policy)?;
                    timings.execution_ms = ms_since(start);
                    Some(report)
                }
                None => None,
            };
            let hidden_report = if cfg.hidden_early_stop || cfg.per_iteration_hidden_eval {
                let start = Instant::now();
                let report = self.executor.run_suite(&candidate.source, &task.hidden_tests, &policy)?;
                timings.hidden_ms = ms_since(start);
                Some(report)
            } else {
                None
            };
            let hidden_passed = hidden_report.as_ref().map(|r| r.all_passed);
            let generated_passed = generated_report.as_ref().map(|r| r.all_passed);
            history.push(IterationRecord {
                iteration: t,
                reflection: reflection.take(),
                candidate: candidate.clone(),
                generated_suite_report: generated_report.clone(),
                hidden_suite_report: hidden_report,
                timings: std::mem::take(&mut timings),
            });

            if cfg.hidden_early_stop && hidden_passed == Some(true) {
                let hidden = self.hidden_for_last(task, &policy, history)?;
                return Ok((LoopStatus::Repaired, TerminationReason::HiddenEarlyStop, hidden));
            }
            if generated_passed == Some(true) {
                let hidden = self.hidden_for_last(task, &policy, history)?;
                let keep_going = cfg.continue_after_false_positive && !hidden.all_passed && t < cfg.budget_k;
                if !keep_going {
                    return Ok((status_of(&hidden), TerminationReason::GeneratedTestsPassed, hidden));
                }
            }
            if t == cfg.budget_k {
                break;
            }

            // Feedback that shapes r_{t+1}.
            let next = t + 1;
            raw_feedback = None;
            if cfg.enable_self_reflection {
                let start = Instant::now();
                let updated = match &generated_report {
                    Some(report) if !report.all_passed => {
                        self.agents.update_reflection(id, &prompt, &candidate, report, pc, next)?
                    }
                    _ => self.agents.reflect_on_candidate(id, &prompt, &candidate, pc, next)?,
                };
                timings.reflection_ms = ms_since(start);
                reflection = Some(updated);
            } else if let Some(report) = generated_report {
                raw_feedback = Some((candidate, report));
            }
        }
        let hidden = self.hidden_for_last(task, &policy, history)?;
        Ok((status_of(&hidden), TerminationReason::BudgetExhausted, hidden))
    }

    /// Runs every task on a pool of `workers` threads. Results come back in
    /// input order whatever the scheduling.
    pub fn run_corpus(&self, tasks: &[RepairTask], workers: usize) -> Vec<LoopOutcome> {
        let workers = workers.max(1).min(tasks.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<LoopOutcome>>> = Mutex::new(vec![None; tasks.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(task) = tasks.get(i) else { break };
                    let outcome = self.run_task(task);
                    if let Some(dir) = &self.record_dir {
                        if let Err(e) = write_run_record(dir, &outcome) {
                            log::warn!("task {}: cannot write run record: {e}", task.task_id);
                        }
                    }
                    log::info!("task {}: {:?}", task.task_id, outcome.status);
                    slots.lock().expect("result lock")[i] = Some(outcome);
                });
            }
        });
        slots
            .into_inner()
            .expect("result lock")
            .into_iter()
            .map(|o| o.expect("every task produces an outcome"))
            .collect()
    }
}

/// File name for a task's run record. Characters outside `[A-Za-z0-9._-]`
/// are replaced so any task id maps to a safe name.
pub fn run_record_path(dir: &Path, task_id: &str) -> PathBuf {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    dir.join(format!("{safe}.json"))
}

pub fn write_run_record(dir: &Path, outcome: &LoopOutcome) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = run_record_path(dir, &outcome.task_id);
    let json = serde_json::to_string_pretty(outcome).map_err(io::Error::other)?;
    fs::write(&path, json + "\n")?;
    Ok(path)
}

pub fn read_run_record(path: &Path) -> io::Result<LoopOutcome> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
}
