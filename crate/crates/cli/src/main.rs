mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use repair_forge::agents::{ProgrammerStrategy, ReflectionStrategy};
use repair_forge::bench_ingest::CorpusFormat;
use repair_forge::executor::MemoryEnforcement;

use manifest::{BackendKind, RunManifest};

/// Failure classes, each with a fixed exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input data, bad configuration or a failed analysis (exit 1).
    Invalid(String),
    /// Missing files, unwritable directories, unreachable services (exit 2).
    Env(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Env(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Env(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "repair-forge", version, about = "Feedback-driven program repair with generated tests and reflection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus file and summarise its contents
    Validate {
        corpus: PathBuf,
        #[arg(long, value_parser = parse_format, default_value = "canonical")]
        format: CorpusFormat,
    },
    /// Run the repair loop over a corpus
    Run(Box<RunArgs>),
    /// Summarise a finished run, optionally against another run
    Report {
        run_dir: PathBuf,
        /// Second run directory; prints the four-way solved-set partition
        #[arg(long)]
        diff: Option<PathBuf>,
        /// Print the report as JSON instead of tables
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Ablation {
    NoTestGen,
    NoSelfReflection,
    NoFirstReflection,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key/value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<CorpusFormat>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Recorded completions for the mock backend
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stratified subset of the corpus to run
    #[arg(long)]
    subset_fraction: Option<f64>,
    /// Iteration budget K
    #[arg(long)]
    budget: Option<u32>,
    /// Disable a loop component; repeatable
    #[arg(long, value_enum)]
    ablate: Vec<Ablation>,
    /// Run hidden tests after every candidate and stop at the first pass
    #[arg(long)]
    early_stop: bool,
    /// Record hidden-test results for every candidate
    #[arg(long)]
    per_iteration_hidden: bool,
    /// Keep iterating when generated tests pass but hidden tests fail
    #[arg(long)]
    continue_after_false_positive: bool,
    #[arg(long, value_parser = parse_programmer)]
    programmer_strategy: Option<ProgrammerStrategy>,
    #[arg(long, value_parser = parse_reflection)]
    reflection_strategy: Option<ReflectionStrategy>,
    #[arg(long)]
    include_io_spec: Option<bool>,
    #[arg(long)]
    include_limits: Option<bool>,
    #[arg(long)]
    include_samples: Option<bool>,
    /// Interpreter command line, e.g. "ruby" or "/opt/ruby/bin/ruby --disable-gems"
    #[arg(long)]
    interpreter: Option<String>,
    #[arg(long, value_parser = parse_memory)]
    memory_enforcement: Option<MemoryEnforcement>,
    #[arg(long)]
    output_cap_bytes: Option<usize>,
    /// Directory of prompt templates overriding the built-in ones
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Print the resolved configuration and exit
    #[arg(long)]
    print_config: bool,
}

fn parse_format(s: &str) -> Result<CorpusFormat, String> {
    s.parse()
}

fn parse_programmer(s: &str) -> Result<ProgrammerStrategy, String> {
    s.parse()
}

fn parse_reflection(s: &str) -> Result<ReflectionStrategy, String> {
    s.parse()
}

fn parse_memory(s: &str) -> Result<MemoryEnforcement, String> {
    match s {
        "address_space" => Ok(MemoryEnforcement::AddressSpace),
        "monitor" => Ok(MemoryEnforcement::Monitor),
        other => Err(format!("unknown memory enforcement {other:?}")),
    }
}

impl RunArgs {
    fn manifest(&self) -> Result<RunManifest, CliError> {
        let mut m = match &self.config {
            Some(path) => RunManifest::load(path)?,
            None => RunManifest::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$flag { m.$field = v.clone().into(); })*
            };
        }
        set! {
            corpus => corpus_path,
            format => corpus_format,
            backend => backend,
            trace => trace_path,
            output_dir => output_dir,
            run_id => run_id,
            workers => worker_count,
            seed => seed,
            subset_fraction => subset_fraction,
            budget => budget_k,
            programmer_strategy => programmer_strategy,
            reflection_strategy => reflection_strategy,
            include_io_spec => include_io_spec,
            include_limits => include_limits,
            include_samples => include_samples,
            interpreter => interpreter,
            memory_enforcement => memory_enforcement,
            output_cap_bytes => output_cap_bytes,
            templates => templates_dir,
        }
        for a in &self.ablate {
            match a {
                Ablation::NoTestGen => m.enable_test_generation = false,
                Ablation::NoSelfReflection => m.enable_self_reflection = false,
                Ablation::NoFirstReflection => m.enable_first_reflection = false,
            }
        }
        if self.early_stop {
            m.hidden_early_stop = true;
        }
        if self.per_iteration_hidden {
            m.per_iteration_hidden_eval = true;
        }
        if self.continue_after_false_positive {
            m.continue_after_false_positive = true;
        }
        Ok(m)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { corpus, format } => commands::validate(&corpus, format),
        Command::Run(args) => args.manifest().and_then(|m| {
            if args.print_config {
                print!("{}", m.to_toml());
                Ok(())
            } else {
                commands::run(&m)
            }
        }),
        Command::Report { run_dir, diff, json } => commands::report(&run_dir, diff.as_deref(), json),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
