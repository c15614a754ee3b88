//! Command-line front end. Each subcommand is one pipeline stage that reads
//! and writes files, so any stage can be re-run on persisted artifacts.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    analyze, AnalysisInputs, AnalysisOptions, ClassifierBinding, ExpectedDirections, Unit,
};
use crate::catalog::{
    bundled_clip_manifest, generate_descriptions, load_clip_manifest, DescriptionCatalog,
    GenerationOptions,
};
use crate::lexicon::Lexicon;
use crate::llm::{
    BackendKind, ChatBackend, HttpOptions, RetryPolicy, ScriptedBackend, DEFAULT_API_KEY_ENV,
    DEFAULT_ENDPOINT, DEFAULT_MODEL,
};
use crate::prompt::{PersonaConfig, Personality, ScenarioKind};
use crate::report::{render, write_report, ReportFormat};
use crate::schema::load_schema;
use crate::sim::{run_dir_name, run_experiment, validate_run, Corpus, RunConfig};
use crate::stats::TTestVariant;

#[derive(Debug, Parser)]
#[command(
    name = "nvpersona",
    version,
    about = "Simulate extrovert/introvert agent dialogues with nonverbal markup and analyze the transcripts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run agent-to-agent dialogues and write a transcript corpus.
    Simulate(SimulateArgs),
    /// Compare personality groups in a corpus and write a report.
    Analyze(AnalyzeArgs),
    /// Generate natural-language descriptions for the animation clip manifest.
    DescribeClips(DescribeArgs),
    /// Re-check turn caps, alternation, markup validity and the question protocol.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioChoice {
    Negotiation,
    Icebreaking,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PersonalityChoice {
    Extrovert,
    Introvert,
    Both,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Chat backend: `scripted` (bundled demo), `scripted:FILE`, `replay:RUN_DIR` or `http`.
    #[arg(long, default_value = "scripted", value_parser = clap::value_parser!(BackendKind))]
    pub backend: BackendKind,
    /// Model name sent to the HTTP backend.
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: String,
    /// Chat-completion endpoint for `--backend http`.
    #[arg(long, default_value = DEFAULT_ENDPOINT)]
    pub endpoint: String,
    /// Environment variable holding the API key for `--backend http`.
    #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
    pub api_key_env: String,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    pub timeout: u64,
    /// Maximum concurrent HTTP requests.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_concurrency: u64,
}

impl BackendArgs {
    fn kind(&self) -> BackendKind {
        match &self.backend {
            BackendKind::HttpChatCompletion { .. } => BackendKind::HttpChatCompletion {
                endpoint: self.endpoint.clone(),
                auth_env: self.api_key_env.clone(),
            },
            other => other.clone(),
        }
    }

    fn http(&self) -> HttpOptions {
        HttpOptions {
            timeout: Duration::from_secs(self.timeout),
            retry: RetryPolicy::default(),
            max_concurrency: self.max_concurrency as usize,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "both")]
    pub scenario: ScenarioChoice,
    #[arg(long, value_enum, default_value = "both")]
    pub personality: PersonalityChoice,
    /// Trials per (scenario, personality) cell; defaults to the scenario config (10).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: Option<u64>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Seed for every random choice (prompt description sampling, per-trial seeds).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parent directory for new run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Use exactly this run directory (resumes it if it already holds a corpus).
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// TOML file overriding parts of the persona and scenario configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Description catalog (JSONL) to sample action descriptions from.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Trials to run in parallel.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Downgrade unknown action names to warnings instead of failures.
    #[arg(long)]
    pub lenient: bool,
    /// Ask the generic agent for nonverbal markup too.
    #[arg(long)]
    pub generic_annotations: bool,
    /// Give the personality agent the other scenario role.
    #[arg(long)]
    pub swap_roles: bool,
    /// Consecutive failed turns before a trial is marked failed.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_failures: u64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directory written by `simulate`.
    pub run_dir: PathBuf,
    /// Run every section (the default when no section flag is given).
    #[arg(long)]
    pub all: bool,
    /// Lexical features, word and sentence counts.
    #[arg(long)]
    pub verbal: bool,
    /// Extraversion classification and chi-square tests.
    #[arg(long)]
    pub classify: bool,
    /// Nonverbal action selection frequencies.
    #[arg(long)]
    pub nonverbal: bool,
    /// Lexicon file in dictionary format; defaults to the bundled demo lexicon.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Expected-direction map (TOML); defaults to the bundled one.
    #[arg(long)]
    pub expected: Option<PathBuf>,
    /// `baseline`, `baseline:THRESHOLD`, or an http(s) URL speaking `{text}` -> `{extravert}`.
    #[arg(long, default_value = "baseline", value_parser = clap::value_parser!(ClassifierBinding))]
    pub classifier: ClassifierBinding,
    /// Document unit for lexical scores and selection frequencies.
    #[arg(long, default_value = "utterance", value_parser = clap::value_parser!(Unit))]
    pub unit: Unit,
    /// Use Student's pooled-variance t-test instead of Welch's.
    #[arg(long)]
    pub student: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub d_min: f64,
    /// Report directory; defaults to RUN_DIR/report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// Clip manifest (JSON list of {action, clip, notes}); defaults to the bundled one.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Descriptions per action.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    #[arg(long, default_value = "descriptions.jsonl")]
    pub out: PathBuf,
    /// Regenerate even if the catalog is already complete.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub run_dir: PathBuf,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::DescribeClips(a) => describe_clips(a),
        Command::Validate(a) => validate(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<i32> {
    let mut persona = match &a.config {
        Some(p) => {
            let src = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            PersonaConfig::with_overrides(&src).with_context(|| format!("in {}", p.display()))?
        }
        None => PersonaConfig::default(),
    };
    if a.swap_roles {
        for k in ScenarioKind::ALL {
            persona.scenario_mut(k).swap_roles = true;
        }
    }
    let catalog = match &a.catalog {
        Some(p) => DescriptionCatalog::load(p)?,
        None => DescriptionCatalog::bundled(),
    };
    let scenarios = match a.scenario {
        ScenarioChoice::Negotiation => vec![ScenarioKind::Negotiation],
        ScenarioChoice::Icebreaking => vec![ScenarioKind::IceBreaking],
        ScenarioChoice::Both => ScenarioKind::ALL.to_vec(),
    };
    let personalities = match a.personality {
        PersonalityChoice::Extrovert => vec![Personality::Extrovert],
        PersonalityChoice::Introvert => vec![Personality::Introvert],
        PersonalityChoice::Both => vec![Personality::Extrovert, Personality::Introvert],
    };
    let backend = a.backend.kind().connect(&a.backend.http())?;
    let config = RunConfig {
        persona,
        catalog,
        seed: a.seed,
        model: a.backend.model.clone(),
        scenarios,
        personalities,
        trials: a.trials.map(|t| t as usize),
        generic_annotations: a.generic_annotations,
        lenient: a.lenient,
        max_consecutive_failures: a.max_failures as usize,
        backend: backend.descriptor(),
        ..RunConfig::default()
    };
    config.validate()?;
    let run_dir = match &a.run_dir {
        Some(d) => d.clone(),
        None => a.out.join(run_dir_name(&config, backend.is_deterministic())),
    };
    let outcome = run_experiment(&config, backend.as_ref(), &run_dir, a.jobs as usize)?;
    eprintln!(
        "ran {} of {} trials ({} already complete)",
        outcome.executed.len(),
        outcome.manifest.trials.len(),
        outcome.manifest.trials.len() - outcome.executed.len()
    );
    for id in &outcome.executed {
        eprintln!("  ran {id}");
    }
    let failed: Vec<_> = outcome
        .manifest
        .trials
        .iter()
        .filter(|e| outcome.failed.contains(&e.trial_id))
        .collect();
    for e in &failed {
        eprintln!("trial {} failed:", e.trial_id);
        for err in &e.errors {
            eprintln!("  {err}");
        }
    }
    println!("{}", run_dir.display());
    Ok(if failed.is_empty() { 0 } else { 1 })
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<i32> {
    let any = a.verbal || a.classify || a.nonverbal;
    let opts = AnalysisOptions {
        verbal: a.all || !any || a.verbal,
        classify: a.all || !any || a.classify,
        nonverbal: a.all || !any || a.nonverbal,
        unit: a.unit,
        alpha: a.alpha,
        d_min: a.d_min,
        variant: if a.student { TTestVariant::Student } else { TTestVariant::Welch },
    };
    let corpus = Corpus::load(&a.run_dir)
        .with_context(|| format!("refusing to analyze {}", a.run_dir.display()))?;
    let (lexicon, label) = match &a.lexicon {
        Some(p) => (Lexicon::from_file(p)?, file_label(p)),
        None => (Lexicon::demo(), "demo lexicon (not LIWC)".to_string()),
    };
    let expected = match &a.expected {
        Some(p) => ExpectedDirections::load(p)?,
        None => ExpectedDirections::bundled(),
    };
    let classifier = a.classifier.build();
    let inputs = AnalysisInputs {
        lexicon: &lexicon,
        lexicon_label: &label,
        expected: &expected,
        classifier: classifier.as_ref(),
    };
    let (report, labels) = analyze(&corpus, &inputs, &opts)?;
    if let Some(c) = &report.classification {
        if let Some(reason) = &c.reason {
            eprintln!("classification unavailable: {reason}");
        }
    }
    let files = render(&report, labels.as_deref(), &ReportFormat::ALL);
    let out = a.out.unwrap_or_else(|| a.run_dir.join("report"));
    write_report(&out, &files).with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(0)
}

fn file_label(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Scripted stand-in for the describer: replays the bundled catalog in schema order.
fn bundled_describer(k: usize) -> ScriptedBackend {
    let catalog = DescriptionCatalog::bundled();
    let mut lines = Vec::new();
    for a in load_schema().actions() {
        let d = catalog.descriptions(a.name);
        for i in 0..k {
            lines.push(d[i % d.len()].clone());
        }
    }
    ScriptedBackend::new(lines)
}

fn describe_clips(a: DescribeArgs) -> Result<i32> {
    let manifest = match &a.manifest {
        Some(p) => load_clip_manifest(p)?,
        None => bundled_clip_manifest(),
    };
    let k = a.k as usize;
    let backend: Box<dyn ChatBackend> = match a.backend.kind() {
        BackendKind::Scripted(None) => Box::new(bundled_describer(k)),
        other => other.connect(&a.backend.http())?,
    };
    let opts = GenerationOptions {
        k,
        force: a.force,
        model: a.backend.model.clone(),
    };
    let summary = generate_descriptions(&manifest, backend.as_ref(), &a.out, &opts)?;
    if summary.backend_calls == 0 {
        eprintln!("catalog already complete; use --force to regenerate");
    }
    eprintln!(
        "{} actions, {} descriptions, {} backend calls",
        summary.catalog.len(),
        summary.catalog.total(),
        summary.backend_calls
    );
    println!("{}", a.out.display());
    Ok(0)
}

fn validate(a: ValidateArgs) -> Result<i32> {
    if !a.run_dir.is_dir() {
        bail!("{} is not a directory", a.run_dir.display());
    }
    let report = validate_run(&a.run_dir)?;
    for v in &report.violations {
        println!("{}: {}", v.trial_id, v.message);
    }
    if report.is_valid() {
        println!(
            "ok: {} trials, {} utterances",
            report.trials_checked, report.utterances_checked
        );
        Ok(0)
    } else {
        println!("{} violation(s)", report.violations.len());
        Ok(1)
    }
}
