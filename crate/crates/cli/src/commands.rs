use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use repair_forge::agents::{Agents, TemplateSet};
use repair_forge::bench_ingest::{
    load_corpus, parse_corpus, parse_corpus_lenient, stratified_subset, write_corpus, CorpusFormat, DifficultyBucket,
    IngestError, RepairTask,
};
use repair_forge::evaluation::{diff_runs, ground_truth_labels, ReportInputs, RunReport, SolvedCount};
use repair_forge::executor::ProcessExecutor;
use repair_forge::llm_gateway::{CompletionBackend, OpenAiCompatibleBackend, ScriptedBackend};
use repair_forge::repair_loop::{read_run_record, run_record_path, LoopOutcome, LoopStatus, RepairEngine};

use crate::manifest::{BackendKind, RunManifest};
use crate::CliError;

const MANIFEST_FILE: &str = "manifest.toml";
const CORPUS_FILE: &str = "corpus.jsonl";
const TASKS_DIR: &str = "tasks";
const GROUND_TRUTH_FILE: &str = "ground_truth.json";
const REPORT_FILE: &str = "report.json";
const CSV_FILE: &str = "report.csv";

fn env_err(context: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Env(format!("{context}: {e}"))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| env_err(&format!("cannot write {}", path.display()), e))
}

fn percent(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

pub fn validate(corpus: &Path, format: CorpusFormat) -> Result<(), CliError> {
    let text = fs::read_to_string(corpus).map_err(|e| env_err(&format!("cannot read {}", corpus.display()), e))?;
    let (tasks, errors) = parse_corpus_lenient(&text, format);

    let mut buckets: BTreeMap<&str, usize> = BTreeMap::new();
    let mut tags: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &tasks {
        *buckets.entry(t.bucket().label()).or_default() += 1;
        for tag in &t.context.tags {
            *tags.entry(tag.as_str()).or_default() += 1;
        }
    }
    println!("{} tasks, {} errors", tasks.len(), errors.len());
    println!("difficulty:");
    for b in DifficultyBucket::RATED.iter().chain([DifficultyBucket::Unrated].iter()) {
        println!("  {:<10} {}", b.label(), buckets.get(b.label()).copied().unwrap_or(0));
    }
    if !tags.is_empty() {
        println!("tags:");
        for (tag, n) in &tags {
            println!("  {tag:<24} {n}");
        }
    }
    for e in &errors {
        println!("error: {e}");
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("{} invalid records", errors.len())))
    }
}

fn load_tasks(m: &RunManifest) -> Result<Vec<RepairTask>, CliError> {
    let path = m.corpus_path.as_deref().expect("validated manifest has a corpus");
    let tasks = load_corpus(path, m.corpus_format).map_err(|e| match e {
        IngestError::Io { .. } => CliError::Env(e.to_string()),
        other => CliError::Invalid(other.to_string()),
    })?;
    if m.subset_fraction < 1.0 {
        return stratified_subset(&tasks, m.subset_fraction, m.seed).map_err(|e| CliError::Invalid(e.to_string()));
    }
    Ok(tasks)
}

fn backend(m: &RunManifest) -> Result<Arc<dyn CompletionBackend>, CliError> {
    Ok(match m.backend {
        BackendKind::Mock => {
            let path = m.trace_path.as_deref().expect("validated manifest has a trace");
            Arc::new(ScriptedBackend::load(path).map_err(|e| CliError::Env(e.to_string()))?)
        }
        BackendKind::Live => Arc::new(OpenAiCompatibleBackend::from_env().map_err(|e| CliError::Env(e.to_string()))?),
    })
}

pub fn run(m: &RunManifest) -> Result<(), CliError> {
    m.validate()?;
    let tasks = load_tasks(m)?;
    let backend = backend(m)?;
    let templates = match &m.templates_dir {
        Some(dir) => TemplateSet::with_overrides(dir).map_err(|e| env_err(&format!("templates {}", dir.display()), e))?,
        None => TemplateSet::builtin(),
    };

    let run_id = m.effective_run_id();
    let run_dir = m.output_dir.join(&run_id);
    fs::create_dir_all(run_dir.join(TASKS_DIR)).map_err(|e| env_err(&format!("cannot create {}", run_dir.display()), e))?;
    write(&run_dir.join(MANIFEST_FILE), &m.to_toml())?;
    write(&run_dir.join(CORPUS_FILE), &write_corpus(&tasks))?;

    let language = tasks.first().map_or("ruby", |t| t.subject_language.as_str());
    let policy = m.sandbox_policy(language);
    let executor = Arc::new(ProcessExecutor);
    let mut engine = RepairEngine::new(
        Agents::new(backend, Arc::new(templates)),
        executor.clone(),
        policy.clone(),
        m.loop_config(),
    );
    engine.record_dir = Some(run_dir.join(TASKS_DIR));

    log::info!("running {} tasks with {} workers", tasks.len(), m.worker_count);
    let outcomes = engine.run_corpus(&tasks, m.worker_count);
    let ground_truth =
        ground_truth_labels(&tasks, &outcomes, executor.as_ref(), &policy).map_err(|e| CliError::Env(e.to_string()))?;
    write(
        &run_dir.join(GROUND_TRUTH_FILE),
        &(serde_json::to_string_pretty(&ground_truth).expect("labels serialise") + "\n"),
    )?;

    let report = build_report(&run_id, m, &tasks, &outcomes, &ground_truth);
    write(&run_dir.join(REPORT_FILE), &report.to_json())?;
    write(&run_dir.join(CSV_FILE), &report.to_csv())?;

    println!("run {run_id}: {}", run_dir.display());
    println!(
        "{} tasks, {} repaired, pass@1 {}",
        report.tasks.len(),
        report.repaired,
        percent(report.pass_at_1)
    );
    let errored: Vec<&LoopOutcome> = outcomes.iter().filter(|o| o.status == LoopStatus::Errored).collect();
    for o in &errored {
        println!("errored: {}: {}", o.task_id, o.error.as_deref().unwrap_or("unknown error"));
    }
    if !outcomes.is_empty() && errored.len() == outcomes.len() {
        return Err(CliError::Env("every task failed with an error".into()));
    }
    Ok(())
}

fn build_report(
    run_id: &str,
    m: &RunManifest,
    tasks: &[RepairTask],
    outcomes: &[LoopOutcome],
    ground_truth: &BTreeMap<String, bool>,
) -> RunReport {
    RunReport::build(&ReportInputs {
        run_id,
        config_digest: &m.config_digest(),
        budget_k: m.budget_k,
        tasks,
        outcomes,
        ground_truth,
    })
}

/// Rebuilds a run's report from the files in its directory.
pub fn load_run(run_dir: &Path) -> Result<RunReport, CliError> {
    let read = |name: &str| -> Result<String, CliError> {
        let path = run_dir.join(name);
        fs::read_to_string(&path).map_err(|e| env_err(&format!("cannot read {}", path.display()), e))
    };
    let m: RunManifest = toml::from_str(&read(MANIFEST_FILE)?).map_err(|e| CliError::Invalid(format!("{MANIFEST_FILE}: {e}")))?;
    let tasks = parse_corpus(&read(CORPUS_FILE)?, CorpusFormat::Canonical).map_err(|e| CliError::Invalid(e.to_string()))?;
    let ground_truth: BTreeMap<String, bool> =
        serde_json::from_str(&read(GROUND_TRUTH_FILE)?).map_err(|e| CliError::Invalid(format!("{GROUND_TRUTH_FILE}: {e}")))?;
    let records = run_dir.join(TASKS_DIR);
    let outcomes = tasks
        .iter()
        .map(|t| {
            let path: PathBuf = run_record_path(&records, &t.task_id);
            read_run_record(&path).map_err(|e| env_err(&format!("missing run record for {}", t.task_id), e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let run_id = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| m.effective_run_id());
    Ok(build_report(&run_id, &m, &tasks, &outcomes, &ground_truth))
}

fn print_counts(title: &str, rows: &BTreeMap<String, SolvedCount>) {
    println!("{title}:");
    for (key, c) in rows {
        let rate = if c.total == 0 { "-".to_owned() } else { percent(c.pass_at_1) };
        println!("  {key:<24} {:>4}/{:<4} {rate:>7}", c.solved, c.total);
    }
}

fn print_report(r: &RunReport) {
    println!("run {} (config {})", r.run_id, &r.config_digest[..r.config_digest.len().min(12)]);
    println!("tasks {}  repaired {}  pass@1 {}", r.tasks.len(), r.repaired, percent(r.pass_at_1));
    let basis = serde_json::to_value(r.curve_basis).expect("basis serialises");
    println!("cumulative pass@1 ({} basis):", basis.as_str().unwrap_or_default());
    for p in &r.cumulative_curve {
        println!("  t={:<3} {:>7}", p.iteration, percent(p.ratio));
    }
    print_counts("difficulty", &r.difficulty_breakdown);
    print_counts("tags", &r.tag_breakdown);
    print_counts("original outcome", &r.outcome_pass_at_1);
    println!("generated-test confusion:");
    println!("  {:<5} {:>4} {:>4} {:>4} {:>4} {:>10} {:>8}", "t", "TP", "FP", "TN", "FN", "classified", "excluded");
    for row in &r.confusion_by_iteration {
        let excluded = row.excluded_no_ground_truth + row.excluded_no_suite + row.excluded_no_hidden_eval;
        println!(
            "  {:<5} {:>4} {:>4} {:>4} {:>4} {:>10} {:>8}",
            row.iteration, row.tp, row.fp, row.tn, row.fn_, row.classified, excluded
        );
    }
    println!("outcome transitions:");
    for (before, row) in &r.transitions.matrix {
        let cells: Vec<String> = row.iter().map(|(after, n)| format!("{after} {n}")).collect();
        println!("  {before:<24} -> {}", cells.join(", "));
    }
    if let Some(w) = &r.wall_time_totals {
        println!(
            "wall time (ms): reflection {} design {} repair {} execution {} hidden {}",
            w.reflection_ms, w.design_ms, w.repair_ms, w.execution_ms, w.hidden_validation_ms
        );
    }
}

pub fn report(run_dir: &Path, other: Option<&Path>, json: bool) -> Result<(), CliError> {
    let a = load_run(run_dir)?;
    let Some(other) = other else {
        if json {
            print!("{}", a.to_json());
        } else {
            print_report(&a);
        }
        return Ok(());
    };
    let b = load_run(other)?;
    let diff = diff_runs(&a, &b).map_err(|e| CliError::Invalid(e.to_string()))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&diff).expect("diff serialises"));
        return Ok(());
    }
    let sizes: HashMap<&str, usize> = [
        ("only_a", diff.only_a.len()),
        ("only_b", diff.only_b.len()),
        ("both", diff.both.len()),
        ("neither", diff.neither.len()),
    ]
    .into();
    println!("a = {}  b = {}", a.run_id, b.run_id);
    for (name, set) in [("only_a", &diff.only_a), ("only_b", &diff.only_b), ("both", &diff.both), ("neither", &diff.neither)] {
        let ids: Vec<&str> = set.iter().map(String::as_str).collect();
        println!("{name:<8} {:>4}  {}", sizes[name], ids.join(" "));
    }
    Ok(())
}
