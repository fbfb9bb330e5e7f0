//! Run analytics: pass@k, cumulative pass@1, generated-test confusion
//! against ground-truth programs, breakdowns, outcome transitions and
//! run-vs-run diffs.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::GeneratedTestSuite;
use crate::bench_ingest::{DifficultyBucket, RepairTask};
use crate::executor::{ExecError, Executor, SandboxPolicy, Verdict};
use crate::repair_loop::{LoopOutcome, LoopStatus, TerminationReason};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid pass@k parameters n={n}, c={c}, k={k}")]
    InvalidPassAtK { n: u64, c: u64, k: u64 },
    #[error(
        "task {task_id} has no hidden-test result for iteration {iteration}; enable per_iteration_hidden_eval"
    )]
    MissingHiddenEval { task_id: String, iteration: u32 },
    #[error("runs cover different tasks: {0}")]
    UniverseMismatch(String),
    #[error("ground-truth execution failed: {0}")]
    Exec(#[from] ExecError),
    #[error("task {0} has no ground-truth program")]
    MissingGroundTruth(String),
}

/// Probability that at least one of `k` draws without replacement from `n`
/// candidates, `c` of them correct, is correct: `1 - C(n-c, k) / C(n, k)`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, EvalError> {
    if n == 0 || c > n || k == 0 || k > n {
        return Err(EvalError::InvalidPassAtK { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0_f64;
    for i in 0..k {
        miss *= 1.0 - c as f64 / (n - i) as f64;
    }
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u32,
    pub ratio: f64,
}

/// Curve from each task's first solving iteration (`None` = never solved).
pub fn curve_from_first_solves(first_solves: &[Option<u32>], last_iteration: u32) -> Vec<CurvePoint> {
    let total = first_solves.len();
    (0..=last_iteration)
        .map(|i| {
            let solved = first_solves.iter().filter(|s| s.is_some_and(|t| t <= i)).count();
            CurvePoint {
                iteration: i,
                ratio: if total == 0 { 0.0 } else { solved as f64 / total as f64 },
            }
        })
        .collect()
}

/// Per-task hidden results for iterations `0..=terminal`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenTimeline {
    pub task_id: String,
    pub per_iteration: Vec<Option<bool>>,
}

impl HiddenTimeline {
    pub fn from_outcome(outcome: &LoopOutcome) -> Self {
        Self {
            task_id: outcome.task_id.clone(),
            per_iteration: outcome.history.iter().map(|r| r.hidden_passed()).collect(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.per_iteration.iter().all(Option::is_some)
    }
}

/// Share of tasks solved at least once by each iteration. A task that
/// later regresses stays solved. Every iteration up to a task's terminal
/// one must carry a hidden result.
pub fn cumulative_pass_at_1(timelines: &[HiddenTimeline], last_iteration: u32) -> Result<Vec<CurvePoint>, EvalError> {
    let mut first = Vec::with_capacity(timelines.len());
    for tl in timelines {
        if let Some(missing) = tl.per_iteration.iter().position(Option::is_none) {
            return Err(EvalError::MissingHiddenEval {
                task_id: tl.task_id.clone(),
                iteration: missing as u32,
            });
        }
        first.push(tl.per_iteration.iter().position(|p| *p == Some(true)).map(|t| t as u32));
    }
    Ok(curve_from_first_solves(&first, last_iteration))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfusionCell {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP")]
    FalsePositive,
    #[serde(rename = "TN")]
    TrueNegative,
    #[serde(rename = "FN")]
    FalseNegative,
}

/// Label from whether T_g passes on the ground truth and whether the
/// candidate passes T_h.
pub fn confusion_cell(ground_truth_passes_suite: bool, candidate_hidden_passed: bool) -> ConfusionCell {
    match (ground_truth_passes_suite, candidate_hidden_passed) {
        (true, true) => ConfusionCell::TruePositive,
        (false, true) => ConfusionCell::FalseNegative,
        (true, false) => ConfusionCell::FalsePositive,
        (false, false) => ConfusionCell::TrueNegative,
    }
}

/// Whether the ground-truth program passes every generated test.
pub fn ground_truth_passes(
    suite: &GeneratedTestSuite,
    ground_truth: &str,
    executor: &dyn Executor,
    policy: &SandboxPolicy,
) -> Result<bool, EvalError> {
    Ok(executor.run_suite(ground_truth, &suite.vectors(), policy)?.all_passed)
}

pub fn classify_generated_suite(
    suite: &GeneratedTestSuite,
    ground_truth: &str,
    candidate_hidden_passed: bool,
    executor: &dyn Executor,
    policy: &SandboxPolicy,
) -> Result<ConfusionCell, EvalError> {
    let gt = ground_truth_passes(suite, ground_truth, executor, policy)?;
    Ok(confusion_cell(gt, candidate_hidden_passed))
}

/// Ground-truth verdict on each task's generated suite, keyed by task id.
/// Tasks without a suite or a ground truth are absent.
pub fn ground_truth_labels(
    tasks: &[RepairTask],
    outcomes: &[LoopOutcome],
    executor: &dyn Executor,
    base_policy: &SandboxPolicy,
) -> Result<BTreeMap<String, bool>, EvalError> {
    let by_id: HashMap<&str, &RepairTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut labels = BTreeMap::new();
    for outcome in outcomes {
        let (Some(task), Some(suite)) = (by_id.get(outcome.task_id.as_str()), &outcome.generated_suite) else {
            continue;
        };
        let Some(gt) = &task.ground_truth_source else { continue };
        let passes = ground_truth_passes(suite, gt, executor, &base_policy.for_task(task))?;
        labels.insert(outcome.task_id.clone(), passes);
    }
    Ok(labels)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub iteration: u32,
    #[serde(rename = "TP")]
    pub tp: u32,
    #[serde(rename = "FP")]
    pub fp: u32,
    #[serde(rename = "TN")]
    pub tn: u32,
    #[serde(rename = "FN")]
    pub fn_: u32,
    pub classified: u32,
    pub excluded_no_ground_truth: u32,
    pub excluded_no_suite: u32,
    pub excluded_no_hidden_eval: u32,
}

impl ConfusionRow {
    fn add(&mut self, cell: ConfusionCell) {
        match cell {
            ConfusionCell::TruePositive => self.tp += 1,
            ConfusionCell::FalsePositive => self.fp += 1,
            ConfusionCell::TrueNegative => self.tn += 1,
            ConfusionCell::FalseNegative => self.fn_ += 1,
        }
        self.classified += 1;
    }
}

/// One row per iteration. A task that stopped early contributes its
/// terminal candidate to every later row. Iterations without a hidden
/// result for the task's candidate are counted as exclusions.
pub fn confusion_by_iteration(
    tasks: &[RepairTask],
    outcomes: &[LoopOutcome],
    ground_truth: &BTreeMap<String, bool>,
    last_iteration: u32,
) -> Vec<ConfusionRow> {
    let has_gt: HashMap<&str, bool> = tasks
        .iter()
        .map(|t| (t.task_id.as_str(), t.ground_truth_source.is_some()))
        .collect();
    (0..=last_iteration)
        .map(|i| {
            let mut row = ConfusionRow {
                iteration: i,
                ..ConfusionRow::default()
            };
            for outcome in outcomes {
                if outcome.generated_suite.is_none() || outcome.history.is_empty() {
                    row.excluded_no_suite += 1;
                    continue;
                }
                let Some(&gt) = ground_truth.get(&outcome.task_id) else {
                    if has_gt.get(outcome.task_id.as_str()).copied().unwrap_or(false) {
                        row.excluded_no_suite += 1;
                    } else {
                        row.excluded_no_ground_truth += 1;
                    }
                    continue;
                };
                let j = (i as usize).min(outcome.history.len() - 1);
                match outcome.history[j].hidden_passed() {
                    Some(hidden) => row.add(confusion_cell(gt, hidden)),
                    None => row.excluded_no_hidden_eval += 1,
                }
            }
            row
        })
        .collect()
}

/// Counts keyed by (label before repair, verdict after repair).
pub type TransitionMatrix = BTreeMap<String, BTreeMap<String, u64>>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transitions {
    pub matrix: TransitionMatrix,
    pub excluded_no_original_outcome: u32,
    pub excluded_no_hidden_result: u32,
}

/// Every hidden test of the terminal candidate adds one count to the row
/// of its task's original outcome.
pub fn outcome_transitions(tasks: &[RepairTask], outcomes: &[LoopOutcome]) -> Transitions {
    let by_id: HashMap<&str, &RepairTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut out = Transitions::default();
    for outcome in outcomes {
        let Some(before) = by_id.get(outcome.task_id.as_str()).and_then(|t| t.original_outcome) else {
            out.excluded_no_original_outcome += 1;
            continue;
        };
        let Some(report) = &outcome.hidden_report else {
            out.excluded_no_hidden_result += 1;
            continue;
        };
        let row = out.matrix.entry(before.label().to_owned()).or_default();
        for run in &report.records {
            *row.entry(run.record.verdict.label().to_owned()).or_default() += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolvedCount {
    pub solved: u32,
    pub total: u32,
    pub pass_at_1: f64,
}

impl SolvedCount {
    fn record(&mut self, solved: bool) {
        self.total += 1;
        if solved {
            self.solved += 1;
        }
        self.pass_at_1 = self.solved as f64 / self.total as f64;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdowns {
    pub difficulty: BTreeMap<String, SolvedCount>,
    pub tags: BTreeMap<String, SolvedCount>,
    pub outcome: BTreeMap<String, SolvedCount>,
}

/// Original outcomes that always appear in the per-outcome breakdown.
pub const REPORTED_OUTCOMES: [Verdict; 4] = [
    Verdict::WrongAnswer,
    Verdict::CompilationError,
    Verdict::RuntimeError,
    Verdict::TimeLimitExceeded,
];

/// Solved counts per difficulty bucket, per tag (a task counts once for
/// each of its tags) and per original outcome. `solved` is keyed by task id.
pub fn breakdowns(tasks: &[RepairTask], solved: &HashMap<String, bool>) -> Breakdowns {
    let mut b = Breakdowns::default();
    for bucket in DifficultyBucket::RATED.iter().chain([DifficultyBucket::Unrated].iter()) {
        b.difficulty.insert(bucket.label().to_owned(), SolvedCount::default());
    }
    for v in REPORTED_OUTCOMES {
        b.outcome.insert(v.label().to_owned(), SolvedCount::default());
    }
    for task in tasks {
        let Some(&s) = solved.get(&task.task_id) else { continue };
        b.difficulty.entry(task.bucket().label().to_owned()).or_default().record(s);
        let tags: BTreeSet<&str> = task.context.tags.iter().map(String::as_str).collect();
        for tag in tags {
            b.tags.entry(tag.to_owned()).or_default().record(s);
        }
        if let Some(v) = task.original_outcome {
            b.outcome.entry(v.label().to_owned()).or_default().record(s);
        }
    }
    b
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallTimeTotals {
    pub reflection_ms: u64,
    pub design_ms: u64,
    pub repair_ms: u64,
    pub execution_ms: u64,
    pub hidden_validation_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u32,
    pub generated_verdicts: Option<Vec<Verdict>>,
    pub hidden_verdicts: Option<Vec<Verdict>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub outcome: LoopStatus,
    pub solved: bool,
    pub terminating_iteration: Option<u32>,
    pub termination_reason: TerminationReason,
    pub iterations: Vec<IterationSummary>,
    pub error: Option<String>,
}

/// How the cumulative curve was derived: from a hidden result at every
/// iteration, or from terminal validations only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveBasis {
    PerIteration,
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub config_digest: String,
    pub budget_k: u32,
    pub tasks: Vec<TaskSummary>,
    pub pass_at_1: f64,
    pub repaired: u32,
    pub curve_basis: CurveBasis,
    pub cumulative_curve: Vec<CurvePoint>,
    pub confusion_by_iteration: Vec<ConfusionRow>,
    pub difficulty_breakdown: BTreeMap<String, SolvedCount>,
    pub tag_breakdown: BTreeMap<String, SolvedCount>,
    pub outcome_pass_at_1: BTreeMap<String, SolvedCount>,
    pub transitions: Transitions,
    /// The only nondeterministic section.
    pub wall_time_totals: Option<WallTimeTotals>,
}

/// Field names every serialized report carries.
pub const REPORT_FIELDS: [&str; 11] = [
    "run_id",
    "config_digest",
    "tasks",
    "pass_at_1",
    "cumulative_curve",
    "confusion_by_iteration",
    "difficulty_breakdown",
    "tag_breakdown",
    "outcome_pass_at_1",
    "transitions",
    "wall_time_totals",
];

/// First iteration at which a task counts as solved. With hidden results
/// at every iteration that is the first hidden pass; otherwise it is the
/// terminal iteration of a repaired task.
fn first_solve(outcome: &LoopOutcome, basis: CurveBasis) -> Option<u32> {
    match basis {
        CurveBasis::PerIteration => outcome
            .history
            .iter()
            .find(|r| r.hidden_passed() == Some(true))
            .map(|r| r.iteration),
        CurveBasis::Terminal => (outcome.status == LoopStatus::Repaired)
            .then_some(outcome.terminating_iteration)
            .flatten(),
    }
}

pub struct ReportInputs<'a> {
    pub run_id: &'a str,
    pub config_digest: &'a str,
    pub budget_k: u32,
    pub tasks: &'a [RepairTask],
    pub outcomes: &'a [LoopOutcome],
    pub ground_truth: &'a BTreeMap<String, bool>,
}

impl RunReport {
    pub fn build(inputs: &ReportInputs<'_>) -> Self {
        let outcomes = inputs.outcomes;
        let per_iteration = !outcomes.is_empty()
            && outcomes
                .iter()
                .all(|o| o.status == LoopStatus::Errored || HiddenTimeline::from_outcome(o).is_complete());
        let basis = if per_iteration { CurveBasis::PerIteration } else { CurveBasis::Terminal };
        let firsts: Vec<Option<u32>> = outcomes
            .iter()
            .map(|o| if o.status == LoopStatus::Errored { None } else { first_solve(o, basis) })
            .collect();
        let curve = curve_from_first_solves(&firsts, inputs.budget_k);
        let solved: HashMap<String, bool> = outcomes
            .iter()
            .zip(&firsts)
            .map(|(o, f)| (o.task_id.clone(), f.is_some()))
            .collect();
        let b = breakdowns(inputs.tasks, &solved);

        let tasks = outcomes
            .iter()
            .zip(&firsts)
            .map(|(o, f)| TaskSummary {
                task_id: o.task_id.clone(),
                outcome: o.status,
                solved: f.is_some(),
                terminating_iteration: o.terminating_iteration,
                termination_reason: o.termination_reason,
                iterations: o
                    .history
                    .iter()
                    .map(|r| IterationSummary {
                        iteration: r.iteration,
                        generated_verdicts: r.generated_suite_report.as_ref().map(|s| s.verdicts()),
                        hidden_verdicts: r.hidden_suite_report.as_ref().map(|s| s.verdicts()),
                    })
                    .collect(),
                error: o.error.clone(),
            })
            .collect();

        let mut wall = WallTimeTotals::default();
        for o in outcomes {
            let t = o.timings();
            wall.reflection_ms += t.reflection_ms;
            wall.design_ms += o.design_ms;
            wall.repair_ms += t.generation_ms;
            wall.execution_ms += t.execution_ms;
            wall.hidden_validation_ms += t.hidden_ms;
        }

        Self {
            run_id: inputs.run_id.to_owned(),
            config_digest: inputs.config_digest.to_owned(),
            budget_k: inputs.budget_k,
            tasks,
            pass_at_1: curve.last().map_or(0.0, |p| p.ratio),
            repaired: outcomes.iter().filter(|o| o.status == LoopStatus::Repaired).count() as u32,
            curve_basis: basis,
            cumulative_curve: curve,
            confusion_by_iteration: confusion_by_iteration(inputs.tasks, outcomes, inputs.ground_truth, inputs.budget_k),
            difficulty_breakdown: b.difficulty,
            tag_breakdown: b.tags,
            outcome_pass_at_1: b.outcome,
            transitions: outcome_transitions(inputs.tasks, outcomes),
            wall_time_totals: Some(wall),
        }
    }

    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_totals: None,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// Serialized form with the timing section removed, stable across runs.
    pub fn deterministic_json(&self) -> String {
        self.without_timing().to_json()
    }

    pub fn solved_ids(&self) -> BTreeSet<String> {
        self.tasks.iter().filter(|t| t.solved).map(|t| t.task_id.clone()).collect()
    }

    /// One row per task, for spreadsheets.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["task_id", "outcome", "solved", "terminating_iteration", "termination_reason", "iterations", "error"])
            .expect("in-memory csv");
        for t in &self.tasks {
            let reason = serde_json::to_value(t.termination_reason).expect("reason serialises");
            let outcome = serde_json::to_value(t.outcome).expect("status serialises");
            w.write_record([
                t.task_id.as_str(),
                outcome.as_str().unwrap_or_default(),
                if t.solved { "true" } else { "false" },
                &t.terminating_iteration.map(|i| i.to_string()).unwrap_or_default(),
                reason.as_str().unwrap_or_default(),
                &t.iterations.len().to_string(),
                t.error.as_deref().unwrap_or(""),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDiff {
    pub only_a: BTreeSet<String>,
    pub only_b: BTreeSet<String>,
    pub both: BTreeSet<String>,
    pub neither: BTreeSet<String>,
}

pub fn diff_runs(a: &RunReport, b: &RunReport) -> Result<RunDiff, EvalError> {
    let ua: BTreeSet<&str> = a.tasks.iter().map(|t| t.task_id.as_str()).collect();
    let ub: BTreeSet<&str> = b.tasks.iter().map(|t| t.task_id.as_str()).collect();
    if ua != ub {
        let only: Vec<_> = ua.symmetric_difference(&ub).take(5).copied().collect();
        return Err(EvalError::UniverseMismatch(format!("e.g. {}", only.join(", "))));
    }
    let sa = a.solved_ids();
    let sb = b.solved_ids();
    let mut diff = RunDiff::default();
    for id in ua {
        let set = match (sa.contains(id), sb.contains(id)) {
            (true, true) => &mut diff.both,
            (true, false) => &mut diff.only_a,
            (false, true) => &mut diff.only_b,
            (false, false) => &mut diff.neither,
        };
        set.insert(id.to_owned());
    }
    Ok(diff)
}
