//! The three model-backed roles: feedback integrator (reflections), test
//! designer (guiding tests) and programmer (candidate repairs).
//!
//! Every prompt is built by a pure function of its inputs, so the same
//! task and config always produce byte-identical requests. [`Agents`] pairs
//! those builders with a completion backend.

mod prompts;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench_ingest::{ProblemContext, SampleIo, TestVector};
use crate::executor::SuiteReport;
use crate::llm_gateway::{
    extract_code_block, extract_test_suite, AgentRole, CallContext, ChatMessage, CompletionBackend, GatewayError,
    GenerationRequest, MessageRole, SamplingParams,
};

pub use prompts::{render, render_raw_verdicts, render_traces, TemplateSet};

pub const TESTS_PER_CATEGORY: usize = 2;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("empty reflection")]
    EmptyReflection,
    #[error("no code produced")]
    NoCodeProduced,
    #[error("test designer failed: {0}")]
    TestDesignerFailed(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionStrategy {
    #[default]
    DirectErrorReasoning,
    SpecificationUnderstanding,
}

impl ReflectionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            ReflectionStrategy::DirectErrorReasoning => "direct_error_reasoning",
            ReflectionStrategy::SpecificationUnderstanding => "specification_understanding",
        }
    }
}

impl FromStr for ReflectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct_error_reasoning" | "direct" => Ok(Self::DirectErrorReasoning),
            "specification_understanding" | "spec" => Ok(Self::SpecificationUnderstanding),
            other => Err(format!("unknown reflection strategy {other:?}")),
        }
    }
}

impl fmt::Display for ReflectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgrammerStrategy {
    #[default]
    CotFewshot,
    Scot,
}

impl ProgrammerStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            ProgrammerStrategy::CotFewshot => "cot_fewshot",
            ProgrammerStrategy::Scot => "scot",
        }
    }
}

impl FromStr for ProgrammerStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cot_fewshot" | "cot" => Ok(Self::CotFewshot),
            "scot" => Ok(Self::Scot),
            other => Err(format!("unknown programmer strategy {other:?}")),
        }
    }
}

impl fmt::Display for ProgrammerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Prompt strategy and section toggles. The three `include_*` switches
/// shape the programmer prompt; reflections and test design always see the
/// full problem statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub programmer_strategy: ProgrammerStrategy,
    pub reflection_strategy: ReflectionStrategy,
    pub include_io_spec: bool,
    pub include_limits: bool,
    pub include_samples: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            programmer_strategy: ProgrammerStrategy::CotFewshot,
            reflection_strategy: ReflectionStrategy::DirectErrorReasoning,
            include_io_spec: true,
            include_limits: true,
            include_samples: false,
        }
    }
}

impl PromptConfig {
    fn full_context(&self) -> Self {
        Self {
            include_io_spec: true,
            include_limits: true,
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub text: String,
    pub strategy: ReflectionStrategy,
    pub iteration: u32,
    pub derived_from_traces: bool,
    pub prompt: String,
    pub raw_completion: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCategory {
    Basic,
    Edge,
    Large,
}

impl TestCategory {
    pub const ALL: [TestCategory; 3] = [TestCategory::Basic, TestCategory::Edge, TestCategory::Large];

    pub fn key(self) -> &'static str {
        match self {
            TestCategory::Basic => "basic",
            TestCategory::Edge => "edge",
            TestCategory::Large => "large",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedTest {
    pub vector: TestVector,
    pub category: TestCategory,
}

/// Exactly two tests in each category. Construction enforces the shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GeneratedTestSuite {
    tests: Vec<GeneratedTest>,
}

impl GeneratedTestSuite {
    pub fn new(tests: Vec<GeneratedTest>) -> Result<Self, String> {
        for category in TestCategory::ALL {
            let n = tests.iter().filter(|t| t.category == category).count();
            if n != TESTS_PER_CATEGORY {
                return Err(format!(
                    "category {} has {n} tests, expected {TESTS_PER_CATEGORY}",
                    category.key()
                ));
            }
        }
        Ok(Self { tests })
    }

    pub fn tests(&self) -> &[GeneratedTest] {
        &self.tests
    }

    pub fn vectors(&self) -> Vec<TestVector> {
        self.tests.iter().map(|t| t.vector.clone()).collect()
    }
}

impl<'de> Deserialize<'de> for GeneratedTestSuite {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            tests: Vec<GeneratedTest>,
        }
        let raw = Raw::deserialize(deserializer)?;
        GeneratedTestSuite::new(raw.tests).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub source: String,
    pub iteration: u32,
    pub raw_completion: String,
    pub prompt: String,
}

/// What the programmer is told about earlier attempts.
#[derive(Debug, Clone, Copy)]
pub enum RepairGuidance<'a> {
    None,
    Reflection(&'a Reflection),
    /// Previous candidate with its raw verdicts and no analysis.
    RawVerdicts { previous: &'a Candidate, report: &'a SuiteReport },
}

/// The pieces of a task every prompt draws on.
#[derive(Debug, Clone, Copy)]
pub struct TaskPrompt<'a> {
    pub context: &'a ProblemContext,
    pub samples: &'a SampleIo,
    pub buggy_source: &'a str,
    pub language: &'a str,
}

fn feedback_request(templates: &TemplateSet, task: &TaskPrompt<'_>, user: String) -> GenerationRequest {
    let values = base_values(task, &PromptConfig::default());
    GenerationRequest::new(
        vec![
            ChatMessage::system(render(&templates.feedback_system, &values)),
            ChatMessage::user(user),
        ],
        SamplingParams::for_role(AgentRole::FeedbackIntegrator),
    )
}

fn base_values(task: &TaskPrompt<'_>, sections: &PromptConfig) -> HashMap<&'static str, String> {
    prompts::context_values(task.context, task.buggy_source, task.language, sections)
}

fn reflection_values(task: &TaskPrompt<'_>, config: &PromptConfig) -> HashMap<&'static str, String> {
    let mut values = base_values(task, &config.full_context());
    values.insert("analysis_steps", prompts::analysis_steps(config.reflection_strategy).to_owned());
    values
}

pub fn initial_reflection_request(templates: &TemplateSet, task: &TaskPrompt<'_>, config: &PromptConfig) -> GenerationRequest {
    let template = match config.reflection_strategy {
        ReflectionStrategy::DirectErrorReasoning => &templates.reflection_direct,
        ReflectionStrategy::SpecificationUnderstanding => &templates.reflection_spec,
    };
    feedback_request(templates, task, render(template, &reflection_values(task, config)))
}

pub fn update_reflection_request(
    templates: &TemplateSet,
    task: &TaskPrompt<'_>,
    candidate: &Candidate,
    trace: &SuiteReport,
    config: &PromptConfig,
) -> Result<GenerationRequest, AgentError> {
    if trace.failures().next().is_none() {
        return Err(AgentError::ContractViolation(
            "reflection update needs at least one failing test".into(),
        ));
    }
    let mut values = reflection_values(task, config);
    values.insert("candidate", candidate.source.trim_end().to_owned());
    values.insert("traces", render_traces(trace));
    Ok(feedback_request(templates, task, render(&templates.reflection_traces, &values)))
}

pub fn candidate_reflection_request(
    templates: &TemplateSet,
    task: &TaskPrompt<'_>,
    candidate: &Candidate,
    config: &PromptConfig,
) -> GenerationRequest {
    let mut values = reflection_values(task, config);
    values.insert("candidate", candidate.source.trim_end().to_owned());
    feedback_request(templates, task, render(&templates.reflection_candidate, &values))
}

pub fn design_tests_request(templates: &TemplateSet, task: &TaskPrompt<'_>) -> GenerationRequest {
    let mut values = base_values(task, &PromptConfig::default());
    values.insert("samples", prompts::samples_section(task.samples));
    GenerationRequest::new(
        vec![
            ChatMessage::system(render(&templates.designer_system, &values)),
            ChatMessage::user(render(&templates.designer, &values)),
        ],
        SamplingParams::for_role(AgentRole::TestDesigner),
    )
}

pub fn repair_request(
    templates: &TemplateSet,
    task: &TaskPrompt<'_>,
    guidance: RepairGuidance<'_>,
    config: &PromptConfig,
) -> GenerationRequest {
    let mut values = base_values(task, config);
    if config.include_samples {
        values.insert("samples", prompts::samples_section(task.samples));
    }
    match guidance {
        RepairGuidance::None => {}
        RepairGuidance::Reflection(r) => {
            values.insert("reflection", prompts::reflection_section(&r.text));
        }
        RepairGuidance::RawVerdicts { previous, report } => {
            let tag = values["language_tag"].clone();
            values.insert("feedback", render_raw_verdicts(&previous.source, &tag, report));
        }
    }
    let template = match config.programmer_strategy {
        ProgrammerStrategy::CotFewshot => &templates.programmer_cot,
        ProgrammerStrategy::Scot => &templates.programmer_scot,
    };
    GenerationRequest::new(
        vec![
            ChatMessage::system(render(&templates.programmer_system, &values)),
            ChatMessage::user(render(template, &values)),
        ],
        SamplingParams::for_role(AgentRole::Programmer),
    )
}

/// The three roles bound to one backend and template set.
#[derive(Clone)]
pub struct Agents {
    backend: Arc<dyn CompletionBackend>,
    templates: Arc<TemplateSet>,
}

impl fmt::Debug for Agents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agents").finish_non_exhaustive()
    }
}

impl Agents {
    pub fn new(backend: Arc<dyn CompletionBackend>, templates: Arc<TemplateSet>) -> Self {
        Self { backend, templates }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    fn call(&self, task_id: &str, role: AgentRole, request: &GenerationRequest) -> Result<String, AgentError> {
        let result = self.backend.complete(CallContext { task_id, role }, request)?;
        Ok(result.text)
    }

    fn reflect(
        &self,
        task_id: &str,
        request: GenerationRequest,
        config: &PromptConfig,
        iteration: u32,
        derived_from_traces: bool,
    ) -> Result<Reflection, AgentError> {
        let raw = self.call(task_id, AgentRole::FeedbackIntegrator, &request)?;
        let text = raw.trim().to_owned();
        if text.is_empty() {
            return Err(AgentError::EmptyReflection);
        }
        Ok(Reflection {
            text,
            strategy: config.reflection_strategy,
            iteration,
            derived_from_traces,
            prompt: request.rendered(),
            raw_completion: raw,
        })
    }

    /// e_0: an explanation of the bug from the problem and code alone.
    pub fn initial_reflection(&self, task_id: &str, task: &TaskPrompt<'_>, config: &PromptConfig) -> Result<Reflection, AgentError> {
        let request = initial_reflection_request(&self.templates, task, config);
        self.reflect(task_id, request, config, 0, false)
    }

    /// Revised explanation after `candidate` failed some tests in `trace`.
    pub fn update_reflection(
        &self,
        task_id: &str,
        task: &TaskPrompt<'_>,
        candidate: &Candidate,
        trace: &SuiteReport,
        config: &PromptConfig,
        iteration: u32,
    ) -> Result<Reflection, AgentError> {
        let request = update_reflection_request(&self.templates, task, candidate, trace, config)?;
        self.reflect(task_id, request, config, iteration, true)
    }

    /// Revised explanation with no execution feedback, from the latest
    /// candidate and the problem statement.
    pub fn reflect_on_candidate(
        &self,
        task_id: &str,
        task: &TaskPrompt<'_>,
        candidate: &Candidate,
        config: &PromptConfig,
        iteration: u32,
    ) -> Result<Reflection, AgentError> {
        let request = candidate_reflection_request(&self.templates, task, candidate, config);
        self.reflect(task_id, request, config, iteration, false)
    }

    /// Six guiding tests. A malformed payload gets one follow-up asking for
    /// the correct format; a second failure is fatal.
    pub fn design_tests(&self, task_id: &str, task: &TaskPrompt<'_>) -> Result<GeneratedTestSuite, AgentError> {
        let mut request = design_tests_request(&self.templates, task);
        let first = self.call(task_id, AgentRole::TestDesigner, &request)?;
        let error = match extract_test_suite(&first) {
            Ok(suite) => return Ok(suite),
            Err(e) => e,
        };
        log::debug!("task {task_id}: test payload rejected ({error}), asking again");
        let mut values = HashMap::new();
        values.insert("error", error.to_string());
        request.messages.push(ChatMessage {
            role: MessageRole::Assistant,
            content: first,
        });
        request
            .messages
            .push(ChatMessage::user(render(&self.templates.designer_format_repair, &values)));
        let second = self.call(task_id, AgentRole::TestDesigner, &request)?;
        extract_test_suite(&second).map_err(|e| AgentError::TestDesignerFailed(e.to_string()))
    }

    pub fn propose_repair(
        &self,
        task_id: &str,
        task: &TaskPrompt<'_>,
        guidance: RepairGuidance<'_>,
        config: &PromptConfig,
        iteration: u32,
    ) -> Result<Candidate, AgentError> {
        let request = repair_request(&self.templates, task, guidance, config);
        let raw = self.call(task_id, AgentRole::Programmer, &request)?;
        let source = extract_code_block(&raw, task.language);
        if source.trim().is_empty() {
            return Err(AgentError::NoCodeProduced);
        }
        Ok(Candidate {
            source,
            iteration,
            raw_completion: raw,
            prompt: request.rendered(),
        })
    }
}
