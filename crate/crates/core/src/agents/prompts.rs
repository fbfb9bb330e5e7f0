//! Prompt templates and their rendering.
//!
//! Templates are plain text with `{name}` placeholders. Substitution is a
//! single pass over the template, so placeholder-like text inside inserted
//! values (program source, test output) is never expanded. Braces that do
//! not enclose a known placeholder name are copied through unchanged.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::bench_ingest::{ProblemContext, SampleIo};
use crate::executor::SuiteReport;

use super::{PromptConfig, ReflectionStrategy};

/// Longest excerpt of a single stream quoted back into a prompt.
const EXCERPT_BYTES: usize = 1200;

macro_rules! template_set {
    ($($field:ident => $file:literal),* $(,)?) => {
        /// Every prompt template, keyed by file name.
        #[derive(Debug, Clone, PartialEq, Eq)]
        pub struct TemplateSet {
            $(pub $field: String,)*
        }

        impl TemplateSet {
            pub const FILE_NAMES: &'static [&'static str] = &[$($file),*];

            pub fn builtin() -> Self {
                Self {
                    $($field: include_str!(concat!("../../templates/", $file)).to_owned(),)*
                }
            }

            /// Built-in templates, with any same-named file in `dir`
            /// taking precedence.
            pub fn with_overrides(dir: &Path) -> io::Result<Self> {
                let mut set = Self::builtin();
                $(
                    let path = dir.join($file);
                    if path.is_file() {
                        set.$field = fs::read_to_string(&path)?;
                    }
                )*
                Ok(set)
            }
        }
    };
}

template_set! {
    feedback_system => "feedback_system.txt",
    reflection_direct => "reflection_direct.txt",
    reflection_spec => "reflection_spec.txt",
    reflection_traces => "reflection_traces.txt",
    reflection_candidate => "reflection_candidate.txt",
    designer_system => "designer_system.txt",
    designer => "designer.txt",
    designer_format_repair => "designer_format_repair.txt",
    programmer_system => "programmer_system.txt",
    programmer_cot => "programmer_cot.txt",
    programmer_scot => "programmer_scot.txt",
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

pub fn render(template: &str, values: &HashMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        let value = (name_len > 0 && after.as_bytes().get(name_len) == Some(&b'}'))
            .then(|| values.get(&after[..name_len]))
            .flatten();
        match value {
            Some(v) => {
                out.push_str(v);
                rest = &after[name_len + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub(crate) fn display_language(language: &str) -> String {
    let mut chars = language.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn excerpt(text: &str, cap: usize) -> String {
    if text.len() <= cap {
        return text.to_owned();
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}\n... [{} more bytes]", &text[..end], text.len() - end)
}

fn section(heading: &str, body: &str) -> String {
    format!("\n## {heading}\n{}\n", body.trim_end())
}

pub(crate) fn analysis_steps(strategy: ReflectionStrategy) -> &'static str {
    match strategy {
        ReflectionStrategy::DirectErrorReasoning => {
            "Reason directly about the code in the context of the problem description: \
             trace what the implementation does, find where it goes wrong, and pinpoint the likely source of the error."
        }
        ReflectionStrategy::SpecificationUnderstanding => {
            "Work in three stages:\n\
             1. Inferred specification: restate, in your own words, the functional specification implied by the problem description.\n\
             2. Observed behaviour: explain step by step what the buggy code actually does.\n\
             3. Discrepancy: compare the intended and observed behaviours to identify the source of the bug."
        }
    }
}

/// Placeholder values shared by every template for one task. Sections the
/// config disables render as empty strings.
pub(crate) fn context_values(
    context: &ProblemContext,
    buggy_source: &str,
    language: &str,
    sections: &PromptConfig,
) -> HashMap<&'static str, String> {
    let mut v = HashMap::new();
    v.insert("language", display_language(language));
    v.insert("language_tag", language.to_ascii_lowercase());
    v.insert("description", context.description.trim_end().to_owned());
    v.insert(
        "input_spec",
        if sections.include_io_spec && !context.input_spec.trim().is_empty() {
            section("Input format", &context.input_spec)
        } else {
            String::new()
        },
    );
    v.insert(
        "output_spec",
        if sections.include_io_spec && !context.output_spec.trim().is_empty() {
            section("Output format", &context.output_spec)
        } else {
            String::new()
        },
    );
    v.insert(
        "limits",
        if sections.include_limits {
            section(
                "Limits",
                &format!(
                    "Time limit: {} ms per test\nMemory limit: {} KiB",
                    context.time_limit_ms, context.memory_limit_kb
                ),
            )
        } else {
            String::new()
        },
    );
    v.insert("buggy_source", buggy_source.trim_end().to_owned());
    v.insert("samples", String::new());
    v.insert("reflection", String::new());
    v.insert("feedback", String::new());
    v.insert("traces", String::new());
    v.insert("candidate", String::new());
    v
}

pub(crate) fn samples_section(samples: &SampleIo) -> String {
    if samples.pairs.is_empty() {
        return String::new();
    }
    let mut body = String::new();
    for (i, pair) in samples.pairs.iter().enumerate() {
        body.push_str(&format!(
            "Sample {n} input:\n```\n{}\n```\nSample {n} output:\n```\n{}\n```\n",
            pair.input.trim_end(),
            pair.expected_output.trim_end(),
            n = i + 1
        ));
    }
    section("Sample tests", &body)
}

pub(crate) fn reflection_section(text: &str) -> String {
    section("Analysis of the bug", text)
}

/// Failing tests with input, expected and actual output and the error
/// stream, the material the feedback integrator reasons over.
pub fn render_traces(report: &SuiteReport) -> String {
    let mut out = String::new();
    let total = report.records.len();
    out.push_str(&format!(
        "{} of {} tests passed.\n",
        report.passed_count(),
        total
    ));
    for (i, run) in report.records.iter().enumerate() {
        let rec = &run.record;
        if rec.verdict == crate::executor::Verdict::Passed {
            continue;
        }
        out.push_str(&format!("\n### Test {} of {}: {}\n", i + 1, total, rec.verdict));
        out.push_str(&format!("Input:\n```\n{}\n```\n", excerpt(run.test.input.trim_end(), EXCERPT_BYTES)));
        out.push_str(&format!(
            "Expected output:\n```\n{}\n```\n",
            excerpt(run.test.expected_output.trim_end(), EXCERPT_BYTES)
        ));
        out.push_str(&format!(
            "Actual output:\n```\n{}\n```\n",
            excerpt(rec.stdout.trim_end(), EXCERPT_BYTES)
        ));
        if !rec.stderr.trim().is_empty() {
            out.push_str(&format!(
                "Error output:\n```\n{}\n```\n",
                excerpt(rec.stderr.trim_end(), EXCERPT_BYTES)
            ));
        }
    }
    out
}

/// Previous attempt plus its bare per-test verdicts, used when the
/// programmer receives execution results without a reflection.
pub fn render_raw_verdicts(previous_source: &str, language_tag: &str, report: &SuiteReport) -> String {
    let mut body = format!(
        "```{language_tag}\n{}\n```\nIt was run on the test cases with these results:\n",
        previous_source.trim_end()
    );
    for (i, run) in report.records.iter().enumerate() {
        body.push_str(&format!("Test {}: {}\n", i + 1, run.record.verdict));
    }
    section("Previous attempt", &body)
}
