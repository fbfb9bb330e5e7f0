//! Repair-task corpora: canonical line-delimited records, the XCodeEval
//! adapter, difficulty bucketing and stratified subsetting.
//!
//! A corpus file holds one JSON object per line. Blank lines are skipped.
//! Canonical field names:
//!
//! | field                 | type                         |
//! |-----------------------|------------------------------|
//! | `task_id`             | string, unique in the corpus |
//! | `description`         | string, non-empty            |
//! | `input_spec`          | string                       |
//! | `output_spec`         | string                       |
//! | `time_limit_ms`       | integer > 0                  |
//! | `memory_limit_kb`     | integer > 0                  |
//! | `tags`                | array of strings             |
//! | `difficulty`          | integer or null              |
//! | `samples`             | array of `{input, output}`   |
//! | `buggy_source`        | string, non-empty            |
//! | `hidden_tests`        | array of `{input, output}`, non-empty |
//! | `ground_truth_source` | string or null               |
//! | `original_outcome`    | verdict label or null        |
//! | `subject_language`    | string, default `"ruby"`     |

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::executor::Verdict;

pub const DEFAULT_SUBJECT_LANGUAGE: &str = "ruby";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field {field}{}", task_suffix(.task_id))]
    MissingField {
        line: usize,
        field: &'static str,
        task_id: Option<String>,
    },
    #[error("line {line}: invalid field {field}{}: {message}", task_suffix(.task_id))]
    InvalidField {
        line: usize,
        field: &'static str,
        task_id: Option<String>,
        message: String,
    },
    #[error("line {line}: duplicate task_id {task_id}")]
    DuplicateTaskId { line: usize, task_id: String },
    #[error("cannot subset an empty task list")]
    EmptyCorpus,
    #[error("subset fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
}

fn task_suffix(task_id: &Option<String>) -> String {
    match task_id {
        Some(id) => format!(" (task {id})"),
        None => String::new(),
    }
}

impl IngestError {
    /// Line number the error refers to, when it comes from a record.
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Malformed { line, .. }
            | IngestError::MissingField { line, .. }
            | IngestError::InvalidField { line, .. }
            | IngestError::DuplicateTaskId { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemContext {
    pub description: String,
    pub input_spec: String,
    pub output_spec: String,
    pub time_limit_ms: u64,
    pub memory_limit_kb: u64,
    pub tags: Vec<String>,
    pub difficulty: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestVector {
    pub input: String,
    #[serde(rename = "output")]
    pub expected_output: String,
}

impl TestVector {
    pub fn new(input: impl Into<String>, expected_output: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            expected_output: expected_output.into(),
        }
    }
}

/// Sample input/output pairs shown alongside the problem statement.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleIo {
    pub pairs: Vec<TestVector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairTask {
    pub task_id: String,
    pub context: ProblemContext,
    pub samples: SampleIo,
    pub buggy_source: String,
    pub hidden_tests: Vec<TestVector>,
    pub ground_truth_source: Option<String>,
    pub original_outcome: Option<Verdict>,
    pub subject_language: String,
}

impl RepairTask {
    pub fn bucket(&self) -> DifficultyBucket {
        self.context
            .difficulty
            .map(difficulty_bucket)
            .unwrap_or(DifficultyBucket::Unrated)
    }
}

/// Difficulty brackets with half-open edges: `[0,1200)`, `[1200,1400)`,
/// `[1400,1600)`, `[1600,∞)`. Tasks without a rating land in `Unrated`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DifficultyBucket {
    #[serde(rename = "<1200")]
    Below1200,
    #[serde(rename = "1200-1400")]
    From1200To1400,
    #[serde(rename = "1400-1600")]
    From1400To1600,
    #[serde(rename = ">=1600")]
    AtLeast1600,
    #[serde(rename = "unrated")]
    Unrated,
}

impl DifficultyBucket {
    pub const RATED: [DifficultyBucket; 4] = [
        DifficultyBucket::Below1200,
        DifficultyBucket::From1200To1400,
        DifficultyBucket::From1400To1600,
        DifficultyBucket::AtLeast1600,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DifficultyBucket::Below1200 => "<1200",
            DifficultyBucket::From1200To1400 => "1200-1400",
            DifficultyBucket::From1400To1600 => "1400-1600",
            DifficultyBucket::AtLeast1600 => ">=1600",
            DifficultyBucket::Unrated => "unrated",
        }
    }

    pub fn contains(self, difficulty: u32) -> bool {
        match self {
            DifficultyBucket::Below1200 => difficulty < 1200,
            DifficultyBucket::From1200To1400 => (1200..1400).contains(&difficulty),
            DifficultyBucket::From1400To1600 => (1400..1600).contains(&difficulty),
            DifficultyBucket::AtLeast1600 => difficulty >= 1600,
            DifficultyBucket::Unrated => false,
        }
    }
}

impl fmt::Display for DifficultyBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn difficulty_bucket(difficulty: u32) -> DifficultyBucket {
    match difficulty {
        0..=1199 => DifficultyBucket::Below1200,
        1200..=1399 => DifficultyBucket::From1200To1400,
        1400..=1599 => DifficultyBucket::From1400To1600,
        _ => DifficultyBucket::AtLeast1600,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Canonical,
    Xcodeeval,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(CorpusFormat::Canonical),
            "xcodeeval" => Ok(CorpusFormat::Xcodeeval),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

/// XCodeEval APR field names and their canonical counterparts.
///
/// The XCodeEval APR split stores statement fields inline in each record,
/// limits as strings such as `"2 seconds"` / `"256 megabytes"`, and tests
/// under `hidden_unit_tests` with `input`/`output` arrays.
pub const XCODEEVAL_FIELD_MAP: &[(&str, &str)] = &[
    ("bug_code_uid", "task_id"),
    ("description", "description"),
    ("input_spec", "input_spec"),
    ("output_spec", "output_spec"),
    ("time_limit", "time_limit_ms"),
    ("memory_limit", "memory_limit_kb"),
    ("tags", "tags"),
    ("difficulty", "difficulty"),
    ("sample_inputs", "samples[].input"),
    ("sample_outputs", "samples[].output"),
    ("bug_source_code", "buggy_source"),
    ("hidden_unit_tests", "hidden_tests"),
    ("fix_source_code", "ground_truth_source"),
    ("bug_exec_outcome", "original_outcome"),
    ("lang_cluster", "subject_language"),
];

/// Reads a corpus file. Every record must validate; the first failure is
/// returned with its line number.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<RepairTask>, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, format)
}

pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Vec<RepairTask>, IngestError> {
    let (tasks, errors) = parse_corpus_lenient(text, format);
    match errors.into_iter().next() {
        Some(err) => Err(err),
        None => Ok(tasks),
    }
}

/// Parses every line, collecting valid tasks and all record errors rather
/// than stopping at the first. Used by corpus validation.
pub fn parse_corpus_lenient(text: &str, format: CorpusFormat) -> (Vec<RepairTask>, Vec<IngestError>) {
    let mut tasks = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            CorpusFormat::Canonical => parse_canonical_record(raw, line),
            CorpusFormat::Xcodeeval => parse_xcodeeval_record(raw, line),
        };
        match parsed {
            Ok(task) => {
                if !seen.insert(task.task_id.clone()) {
                    errors.push(IngestError::DuplicateTaskId {
                        line,
                        task_id: task.task_id,
                    });
                } else {
                    tasks.push(task);
                }
            }
            Err(err) => errors.push(err),
        }
    }
    (tasks, errors)
}

/// Serialises tasks as canonical records, one per line.
pub fn write_corpus(tasks: &[RepairTask]) -> String {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&to_canonical_value(task).to_string());
        out.push('\n');
    }
    out
}

pub fn to_canonical_value(task: &RepairTask) -> Value {
    serde_json::json!({
        "task_id": task.task_id,
        "description": task.context.description,
        "input_spec": task.context.input_spec,
        "output_spec": task.context.output_spec,
        "time_limit_ms": task.context.time_limit_ms,
        "memory_limit_kb": task.context.memory_limit_kb,
        "tags": task.context.tags,
        "difficulty": task.context.difficulty,
        "samples": task.samples,
        "buggy_source": task.buggy_source,
        "hidden_tests": task.hidden_tests,
        "ground_truth_source": task.ground_truth_source,
        "original_outcome": task.original_outcome,
        "subject_language": task.subject_language,
    })
}

struct Record<'a> {
    obj: &'a Map<String, Value>,
    line: usize,
    task_id: Option<String>,
}

impl<'a> Record<'a> {
    fn missing(&self, field: &'static str) -> IngestError {
        IngestError::MissingField {
            line: self.line,
            field,
            task_id: self.task_id.clone(),
        }
    }

    fn invalid(&self, field: &'static str, message: impl Into<String>) -> IngestError {
        IngestError::InvalidField {
            line: self.line,
            field,
            task_id: self.task_id.clone(),
            message: message.into(),
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.obj.get(key).filter(|v| !v.is_null())
    }

    fn string(&self, key: &str, field: &'static str) -> Result<String, IngestError> {
        match self.get(key) {
            None => Err(self.missing(field)),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.invalid(field, "expected a string")),
        }
    }

    fn opt_string(&self, key: &str, field: &'static str) -> Result<Option<String>, IngestError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.invalid(field, "expected a string or null")),
        }
    }

    fn positive_int(&self, key: &str, field: &'static str) -> Result<u64, IngestError> {
        match self.get(key) {
            None => Err(self.missing(field)),
            Some(v) => match v.as_u64() {
                Some(n) if n > 0 => Ok(n),
                _ => Err(self.invalid(field, "expected a positive integer")),
            },
        }
    }

    fn string_list(&self, key: &str, field: &'static str) -> Result<Vec<String>, IngestError> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|item| {
                    item.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| self.invalid(field, "expected an array of strings"))
                })
                .collect(),
            Some(_) => Err(self.invalid(field, "expected an array of strings")),
        }
    }

    fn difficulty(&self, key: &str) -> Result<Option<u32>, IngestError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .and_then(|n| u32::try_from(n).ok())
                .map(Some)
                .ok_or_else(|| self.invalid("difficulty", "expected a non-negative integer or null")),
        }
    }

    fn vectors(&self, key: &str, field: &'static str, required: bool) -> Result<Vec<TestVector>, IngestError> {
        match self.get(key) {
            None if required => Err(self.missing(field)),
            None => Ok(Vec::new()),
            Some(v) => serde_json::from_value::<Vec<TestVector>>(v.clone())
                .map_err(|e| self.invalid(field, format!("expected an array of {{input, output}}: {e}"))),
        }
    }

    fn verdict(&self, key: &str) -> Result<Option<Verdict>, IngestError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => s
                .parse::<Verdict>()
                .map(Some)
                .map_err(|e| self.invalid("original_outcome", e)),
            Some(_) => Err(self.invalid("original_outcome", "expected a verdict label")),
        }
    }
}

fn parse_object(raw: &str, line: usize) -> Result<Map<String, Value>, IngestError> {
    match serde_json::from_str::<Value>(raw) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(IngestError::Malformed {
            line,
            message: "record is not an object".into(),
        }),
        Err(e) => Err(IngestError::Malformed {
            line,
            message: e.to_string(),
        }),
    }
}

fn parse_canonical_record(raw: &str, line: usize) -> Result<RepairTask, IngestError> {
    let obj = parse_object(raw, line)?;
    let mut rec = Record {
        obj: &obj,
        line,
        task_id: None,
    };
    let task_id = rec.string("task_id", "task_id")?;
    rec.task_id = Some(task_id.clone());

    let description = rec.string("description", "description")?;
    let context = ProblemContext {
        description,
        input_spec: rec.opt_string("input_spec", "input_spec")?.unwrap_or_default(),
        output_spec: rec.opt_string("output_spec", "output_spec")?.unwrap_or_default(),
        time_limit_ms: rec.positive_int("time_limit_ms", "time_limit_ms")?,
        memory_limit_kb: rec.positive_int("memory_limit_kb", "memory_limit_kb")?,
        tags: rec.string_list("tags", "tags")?,
        difficulty: rec.difficulty("difficulty")?,
    };
    let task = RepairTask {
        task_id,
        context,
        samples: SampleIo {
            pairs: rec.vectors("samples", "samples", false)?,
        },
        buggy_source: rec.string("buggy_source", "buggy_source")?,
        hidden_tests: rec.vectors("hidden_tests", "hidden_tests", true)?,
        ground_truth_source: rec.opt_string("ground_truth_source", "ground_truth_source")?,
        original_outcome: rec.verdict("original_outcome")?,
        subject_language: rec
            .opt_string("subject_language", "subject_language")?
            .unwrap_or_else(|| DEFAULT_SUBJECT_LANGUAGE.to_owned()),
    };
    validate_task(&task, &rec)?;
    Ok(task)
}

fn validate_task(task: &RepairTask, rec: &Record<'_>) -> Result<(), IngestError> {
    if task.context.description.trim().is_empty() {
        return Err(rec.invalid("description", "must be non-empty"));
    }
    if task.buggy_source.trim().is_empty() {
        return Err(rec.invalid("buggy_source", "must be non-empty"));
    }
    if task.hidden_tests.is_empty() {
        return Err(rec.invalid("hidden_tests", "must be non-empty"));
    }
    Ok(())
}

/// Parses XCodeEval limit strings: `"2 seconds"`, `"1.5 seconds"`,
/// `"256 megabytes"`. Bare numbers are taken as already in the target unit.
fn parse_limit(value: &Value, unit_scale: &[(&str, f64)]) -> Option<u64> {
    match value {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => {
            let mut parts = s.split_whitespace();
            let amount: f64 = parts.next()?.parse().ok()?;
            let scale = match parts.next() {
                None => 1.0,
                Some(unit) => {
                    let unit = unit.to_ascii_lowercase();
                    unit_scale
                        .iter()
                        .find(|(prefix, _)| unit.starts_with(prefix))
                        .map(|(_, scale)| *scale)?
                }
            };
            let scaled = (amount * scale).round();
            (scaled > 0.0).then_some(scaled as u64)
        }
        _ => None,
    }
}

fn parse_xcodeeval_record(raw: &str, line: usize) -> Result<RepairTask, IngestError> {
    let obj = parse_object(raw, line)?;
    let mut rec = Record {
        obj: &obj,
        line,
        task_id: None,
    };
    let task_id = match rec.get("bug_code_uid") {
        Some(Value::String(s)) => s.clone(),
        Some(v) if v.is_number() => v.to_string(),
        Some(_) => return Err(rec.invalid("task_id", "bug_code_uid must be a string")),
        None => return Err(rec.missing("task_id")),
    };
    rec.task_id = Some(task_id.clone());

    let time_limit_ms = match rec.get("time_limit") {
        None => return Err(rec.missing("time_limit_ms")),
        Some(v) => parse_limit(v, &[("ms", 1.0), ("millisecond", 1.0), ("s", 1000.0)])
            .ok_or_else(|| rec.invalid("time_limit_ms", format!("unrecognised limit {v}")))?,
    };
    let memory_limit_kb = match rec.get("memory_limit") {
        None => return Err(rec.missing("memory_limit_kb")),
        Some(v) => parse_limit(
            v,
            &[("kilobyte", 1.0), ("kb", 1.0), ("megabyte", 1024.0), ("mb", 1024.0), ("gigabyte", 1048576.0), ("gb", 1048576.0)],
        )
        .ok_or_else(|| rec.invalid("memory_limit_kb", format!("unrecognised limit {v}")))?,
    };

    let sample_inputs = rec.string_list("sample_inputs", "samples")?;
    let sample_outputs = rec.string_list("sample_outputs", "samples")?;
    if sample_inputs.len() != sample_outputs.len() {
        return Err(rec.invalid("samples", "sample_inputs and sample_outputs differ in length"));
    }
    let samples = sample_inputs
        .into_iter()
        .zip(sample_outputs)
        .map(|(i, o)| TestVector::new(i, o))
        .collect();

    let hidden_tests = match rec.get("hidden_unit_tests") {
        None => return Err(rec.missing("hidden_tests")),
        // Some dumps store the test list as a JSON-encoded string.
        Some(Value::String(s)) => serde_json::from_str::<Vec<XcodeevalTest>>(s),
        Some(v) => serde_json::from_value::<Vec<XcodeevalTest>>(v.clone()),
    }
    .map_err(|e| rec.invalid("hidden_tests", e.to_string()))?
    .into_iter()
    .map(XcodeevalTest::into_vector)
    .collect();

    let subject_language = rec
        .opt_string("lang_cluster", "subject_language")?
        .map(|s| s.to_ascii_lowercase())
        .unwrap_or_else(|| DEFAULT_SUBJECT_LANGUAGE.to_owned());

    let task = RepairTask {
        task_id,
        context: ProblemContext {
            description: rec.string("description", "description")?,
            input_spec: rec.opt_string("input_spec", "input_spec")?.unwrap_or_default(),
            output_spec: rec.opt_string("output_spec", "output_spec")?.unwrap_or_default(),
            time_limit_ms,
            memory_limit_kb,
            tags: rec.string_list("tags", "tags")?,
            difficulty: rec.difficulty("difficulty")?,
        },
        samples: SampleIo { pairs: samples },
        buggy_source: rec.string("bug_source_code", "buggy_source")?,
        hidden_tests,
        ground_truth_source: rec.opt_string("fix_source_code", "ground_truth_source")?,
        original_outcome: rec.verdict("bug_exec_outcome")?,
        subject_language,
    };
    validate_task(&task, &rec)?;
    Ok(task)
}

#[derive(Deserialize)]
struct XcodeevalTest {
    input: String,
    output: OneOrMany,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl XcodeevalTest {
    // Accepted outputs may be a list; the first entry is the reference answer.
    fn into_vector(self) -> TestVector {
        let output = match self.output {
            OneOrMany::One(s) => s,
            OneOrMany::Many(v) => v.into_iter().next().unwrap_or_default(),
        };
        TestVector::new(self.input, output)
    }
}

/// Draws `ceil(fraction * n)` tasks while keeping every difficulty bucket
/// within one task of its exact proportional share.
///
/// Each bucket first receives `floor(fraction * bucket_size)`; the remaining
/// slots (never more than the number of buckets) go one each to buckets with
/// the largest fractional remainders, ties broken by a seeded shuffle.
/// Members of each bucket are chosen by a seeded shuffle.
/// The returned tasks keep their original corpus order.
pub fn stratified_subset(tasks: &[RepairTask], fraction: f64, seed: u64) -> Result<Vec<RepairTask>, IngestError> {
    if tasks.is_empty() {
        return Err(IngestError::EmptyCorpus);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(IngestError::BadFraction(fraction));
    }
    let total = tasks.len();
    let target = ((fraction * total as f64) - 1e-9).ceil().max(1.0) as usize;
    let target = target.min(total);

    let mut strata: BTreeMap<DifficultyBucket, Vec<usize>> = BTreeMap::new();
    for (idx, task) in tasks.iter().enumerate() {
        strata.entry(task.bucket()).or_default().push(idx);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut quotas: Vec<(DifficultyBucket, usize, f64)> = strata
        .iter()
        .map(|(bucket, members)| {
            let exact = members.len() as f64 * fraction;
            (*bucket, exact.floor() as usize, exact - exact.floor())
        })
        .collect();

    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by(|&a, &b| quotas[b].2.partial_cmp(&quotas[a].2).unwrap_or(std::cmp::Ordering::Equal));
    for &i in order.iter().take(target - assigned) {
        quotas[i].1 += 1;
    }

    let mut chosen = Vec::with_capacity(target);
    for (bucket, quota, _) in quotas {
        let mut members = strata[&bucket].clone();
        members.shuffle(&mut rng);
        chosen.extend(members.into_iter().take(quota));
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| tasks[i].clone()).collect())
}
