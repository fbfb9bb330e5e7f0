use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use repair_forge::agents::{ProgrammerStrategy, PromptConfig, ReflectionStrategy};
use repair_forge::bench_ingest::CorpusFormat;
use repair_forge::executor::{LanguageProfile, MemoryEnforcement, SandboxPolicy, DEFAULT_OUTPUT_CAP_BYTES};
use repair_forge::repair_loop::{LoopConfig, DEFAULT_BUDGET_K};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Live,
}

/// Everything a run needs. Config files use these field names as flat
/// keys; command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub corpus_path: Option<PathBuf>,
    pub corpus_format: CorpusFormat,
    pub backend: BackendKind,
    pub trace_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub run_id: Option<String>,
    pub worker_count: usize,
    pub seed: u64,
    pub subset_fraction: f64,

    pub budget_k: u32,
    pub enable_test_generation: bool,
    pub enable_first_reflection: bool,
    pub enable_self_reflection: bool,
    pub hidden_early_stop: bool,
    pub per_iteration_hidden_eval: bool,
    pub continue_after_false_positive: bool,

    pub programmer_strategy: ProgrammerStrategy,
    pub reflection_strategy: ReflectionStrategy,
    pub include_io_spec: bool,
    pub include_limits: bool,
    pub include_samples: bool,

    pub interpreter: String,
    pub memory_enforcement: MemoryEnforcement,
    pub output_cap_bytes: usize,
    pub templates_dir: Option<PathBuf>,
}

impl Default for RunManifest {
    fn default() -> Self {
        let prompt = PromptConfig::default();
        let lc = LoopConfig::default();
        Self {
            corpus_path: None,
            corpus_format: CorpusFormat::Canonical,
            backend: BackendKind::Mock,
            trace_path: None,
            output_dir: PathBuf::from("runs"),
            run_id: None,
            worker_count: 1,
            seed: 0,
            subset_fraction: 1.0,
            budget_k: DEFAULT_BUDGET_K,
            enable_test_generation: lc.enable_test_generation,
            enable_first_reflection: lc.enable_first_reflection,
            enable_self_reflection: lc.enable_self_reflection,
            hidden_early_stop: lc.hidden_early_stop,
            per_iteration_hidden_eval: lc.per_iteration_hidden_eval,
            continue_after_false_positive: lc.continue_after_false_positive,
            programmer_strategy: prompt.programmer_strategy,
            reflection_strategy: prompt.reflection_strategy,
            include_io_spec: prompt.include_io_spec,
            include_limits: prompt.include_limits,
            include_samples: prompt.include_samples,
            interpreter: "ruby".into(),
            memory_enforcement: MemoryEnforcement::AddressSpace,
            output_cap_bytes: DEFAULT_OUTPUT_CAP_BYTES,
            templates_dir: None,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunManifest {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Env(format!("cannot read config {}: {e}", path.display())))?;
        let mut m: RunManifest =
            toml::from_str(&text).map_err(|e| CliError::Invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut m.corpus_path);
        resolve(base, &mut m.trace_path);
        resolve(base, &mut m.templates_dir);
        if m.output_dir.is_relative() {
            m.output_dir = base.join(&m.output_dir);
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if self.corpus_path.is_none() {
            return bad("corpus_path is required".into());
        }
        if self.backend == BackendKind::Mock && self.trace_path.is_none() {
            return bad("the mock backend requires trace_path".into());
        }
        if self.worker_count == 0 {
            return bad("worker_count must be at least 1".into());
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return bad(format!("subset_fraction must lie in (0, 1], got {}", self.subset_fraction));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
                return bad(format!("run_id {id:?} is not a plain directory name"));
            }
        }
        self.loop_config().validate().map_err(CliError::Invalid)
    }

    pub fn prompt_config(&self) -> PromptConfig {
        PromptConfig {
            programmer_strategy: self.programmer_strategy,
            reflection_strategy: self.reflection_strategy,
            include_io_spec: self.include_io_spec,
            include_limits: self.include_limits,
            include_samples: self.include_samples,
        }
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            budget_k: self.budget_k,
            enable_test_generation: self.enable_test_generation,
            enable_first_reflection: self.enable_first_reflection,
            enable_self_reflection: self.enable_self_reflection,
            hidden_early_stop: self.hidden_early_stop,
            per_iteration_hidden_eval: self.per_iteration_hidden_eval,
            continue_after_false_positive: self.continue_after_false_positive,
            prompt_config: self.prompt_config(),
        }
    }

    pub fn sandbox_policy(&self, language: &str) -> SandboxPolicy {
        SandboxPolicy {
            output_cap_bytes: self.output_cap_bytes,
            interpreter_command: self.interpreter.clone(),
            memory_enforcement: self.memory_enforcement,
            language: LanguageProfile::for_language(language).unwrap_or_else(LanguageProfile::ruby),
            ..SandboxPolicy::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    /// Hash of every setting that can change results. Output location, run
    /// name and worker count are left out.
    pub fn config_digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serialises");
        if let Some(obj) = v.as_object_mut() {
            for key in ["output_dir", "run_id", "worker_count"] {
                obj.remove(key);
            }
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    pub fn effective_run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("run-{}", &self.config_digest()[..12]))
    }
}
