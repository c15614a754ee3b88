//! Agent-to-agent dialogue simulation.
//!
//! A trial pairs a personality agent (extrovert or introvert) with a generic
//! agent in one scenario. Turns alternate, one utterance per turn, until the
//! scenario's cap or an agreed end marker. Each trial streams to its own
//! JSONL transcript; a run manifest tracks per-trial status so interrupted
//! experiments resume where they stopped.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{write_atomic, DescriptionCatalog};
use crate::llm::{CallContext, ChatBackend, ChatMessage, ChatRequest, StreamKey, DEFAULT_MODEL};
use crate::prompt::{
    build_system_prompt, PersonaConfig, Personality, PersonalityProfile, PromptError,
    PromptOptions, ScenarioConfig, ScenarioKind, DEFAULT_TERMINATOR,
};
use crate::schema::{
    load_schema, parse_annotated_with, spoken_text, ActionSchema, ActionSet, AnnotatedUtterance,
    Annotation, MarkupError, MarkupFormat, ParseOptions, Speaker,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRIALS_DIR: &str = "trials";
/// One turn is one utterance by either agent.
pub const TURN_DEFINITION: &str = "utterance";

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("run directory {dir} holds a corpus with config hash {found}, this config hashes to {expected}")]
    ConfigMismatch {
        dir: String,
        found: String,
        expected: String,
    },
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Everything that determines a run. Serialized in full into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub persona: PersonaConfig,
    pub catalog: DescriptionCatalog,
    pub seed: u64,
    pub model: String,
    pub scenarios: Vec<ScenarioKind>,
    pub personalities: Vec<Personality>,
    /// Overrides each scenario's configured trial count.
    pub trials: Option<usize>,
    pub generic_annotations: bool,
    pub lenient: bool,
    pub max_consecutive_failures: usize,
    pub terminator: String,
    pub backend: String,
    pub turn_definition: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            persona: PersonaConfig::default(),
            catalog: DescriptionCatalog::bundled(),
            seed: 0,
            model: DEFAULT_MODEL.into(),
            scenarios: ScenarioKind::ALL.to_vec(),
            personalities: vec![Personality::Extrovert, Personality::Introvert],
            trials: None,
            generic_annotations: false,
            lenient: false,
            max_consecutive_failures: 3,
            terminator: DEFAULT_TERMINATOR.into(),
            backend: String::new(),
            turn_definition: TURN_DEFINITION.into(),
        }
    }
}

#[derive(Serialize)]
struct HashInputs<'a> {
    schema: &'a [crate::schema::NonverbalAction],
    persona: &'a PersonaConfig,
    catalog: &'a DescriptionCatalog,
    seed: u64,
    model: &'a str,
    generic_annotations: bool,
    lenient: bool,
    terminator: &'a str,
    turn_definition: &'a str,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.persona.validate()?;
        let missing = self.catalog.missing(load_schema());
        if !missing.is_empty() {
            return Err(PromptError::CatalogIncomplete(missing).into());
        }
        if self.personalities.contains(&Personality::Generic) {
            return Err(SimError::InvalidConfig(
                "the personality agent must be extrovert or introvert".into(),
            ));
        }
        if self.trials == Some(0) {
            return Err(SimError::InvalidConfig("trials must be at least 1".into()));
        }
        if self.max_consecutive_failures == 0 {
            return Err(SimError::InvalidConfig("max_consecutive_failures must be at least 1".into()));
        }
        if self.terminator.trim().is_empty() {
            return Err(SimError::InvalidConfig("terminator must be non-empty".into()));
        }
        Ok(())
    }

    /// SHA-256 over every input that shapes prompts or parsing. Backend and
    /// trial count are left out so a run can be resumed or extended.
    pub fn config_hash(&self) -> String {
        let inputs = HashInputs {
            schema: load_schema().actions(),
            persona: &self.persona,
            catalog: &self.catalog,
            seed: self.seed,
            model: &self.model,
            generic_annotations: self.generic_annotations,
            lenient: self.lenient,
            terminator: &self.terminator,
            turn_definition: &self.turn_definition,
        };
        let bytes = serde_json::to_vec(&inputs).expect("hash inputs serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn trial_count(&self, kind: ScenarioKind) -> usize {
        self.trials.unwrap_or(self.persona.scenario(kind).trials)
    }

    /// The full factorial in (scenario, personality, index) order.
    pub fn trial_specs(&self) -> Vec<TrialSpec> {
        let mut scenarios = self.scenarios.clone();
        scenarios.sort();
        scenarios.dedup();
        let mut personalities = self.personalities.clone();
        personalities.sort();
        personalities.dedup();
        let mut out = Vec::new();
        for &scenario in &scenarios {
            for &personality in &personalities {
                for trial_index in 0..self.trial_count(scenario) {
                    let mut spec = TrialSpec {
                        scenario,
                        personality,
                        trial_index,
                        seed: 0,
                    };
                    spec.seed = derive_seed(self.seed, &spec.trial_id());
                    out.push(spec);
                }
            }
        }
        out
    }
}

/// Stable per-trial seed: first 8 bytes of SHA-256("{run_seed}:{trial_id}").
pub fn derive_seed(run_seed: u64, trial_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{run_seed}:{trial_id}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub scenario: ScenarioKind,
    pub personality: Personality,
    pub trial_index: usize,
    pub seed: u64,
}

impl TrialSpec {
    pub fn trial_id(&self) -> String {
        format!("{}-{}-{:02}", self.scenario, self.personality, self.trial_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Pending,
    Complete,
    Failed,
}

/// Per-trial manifest record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial_id: String,
    pub scenario: ScenarioKind,
    pub personality: Personality,
    pub trial_index: usize,
    pub seed: u64,
    pub file: String,
    pub status: TrialStatus,
    pub utterances: usize,
    #[serde(default)]
    pub errors: Vec<String>,
    pub started_at: Option<String>,
    pub ended_at: Option<String>,
    pub backend: String,
}

impl TrialEntry {
    fn pending(spec: &TrialSpec, backend: &str) -> Self {
        let id = spec.trial_id();
        TrialEntry {
            file: format!("{TRIALS_DIR}/{id}.jsonl"),
            trial_id: id,
            scenario: spec.scenario,
            personality: spec.personality,
            trial_index: spec.trial_index,
            seed: spec.seed,
            status: TrialStatus::Pending,
            utterances: 0,
            errors: Vec::new(),
            started_at: None,
            ended_at: None,
            backend: backend.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    #[serde(flatten)]
    pub entry: TrialEntry,
    pub utterances: Vec<AnnotatedUtterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub trials: Vec<TrialEntry>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Manifest, SimError> {
        let path = run_dir.join(MANIFEST_FILE);
        let src = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Manifest = serde_json::from_str(&src).map_err(|e| SimError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(SimError::Corrupt {
                path: path.display().to_string(),
                message: format!("unsupported manifest schema version {}", m.schema_version),
            });
        }
        Ok(m)
    }

    /// Fails if the stored hash does not match the stored config.
    pub fn verify_hash(&self, run_dir: &Path) -> Result<(), SimError> {
        let expected = self.config.config_hash();
        if expected != self.config_hash {
            return Err(SimError::Corrupt {
                path: run_dir.join(MANIFEST_FILE).display().to_string(),
                message: format!(
                    "config hash {} does not match the recorded config (hashes to {expected})",
                    self.config_hash
                ),
            });
        }
        Ok(())
    }

    pub fn save(&self, run_dir: &Path) -> Result<(), SimError> {
        let path = run_dir.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        write_atomic(&path, json.as_bytes()).map_err(io_err(&path))
    }
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub trial_id: String,
    pub turn_index: usize,
    pub speaker: Speaker,
    pub text: String,
    pub actions: ActionSet,
    pub raw: String,
}

impl TranscriptRecord {
    pub fn new(trial_id: &str, u: &AnnotatedUtterance) -> Self {
        TranscriptRecord {
            trial_id: trial_id.to_string(),
            turn_index: u.turn_index,
            speaker: u.speaker,
            text: u.text.clone(),
            actions: u.actions.clone(),
            raw: u.raw.clone(),
        }
    }

    pub fn into_utterance(self) -> AnnotatedUtterance {
        AnnotatedUtterance {
            speaker: self.speaker,
            turn_index: self.turn_index,
            text: self.text,
            actions: self.actions,
            raw: self.raw,
        }
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, SimError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SimError::Corrupt {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn now_stamp(deterministic: bool) -> Option<String> {
    (!deterministic)
        .then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

const KICKOFF: &str = "(The conversation begins. You speak first.)";

fn build_request(
    config: &RunConfig,
    system_prompt: &str,
    history: &[AnnotatedUtterance],
    speaker: Speaker,
    instruction: Option<String>,
) -> ChatRequest {
    let mut req = ChatRequest::new(system_prompt);
    req.model = config.model.clone();
    if history.is_empty() {
        req.messages.push(ChatMessage::user(KICKOFF));
    }
    for u in history {
        req.messages.push(if u.speaker == speaker {
            ChatMessage::assistant(u.raw.clone())
        } else {
            ChatMessage::user(u.text.clone())
        });
    }
    if let Some(i) = instruction {
        req.messages.push(ChatMessage::system(i));
    }
    req
}

fn contains_question(text: &str, question: &str) -> bool {
    text.to_lowercase().contains(&question.trim().to_lowercase())
}

/// Runs one dialogue, streaming each utterance to `sink` as it is produced.
///
/// Backend and parse failures are recorded in the trial's error list and the
/// turn is re-requested; `max_consecutive_failures` in a row marks the trial
/// failed. Prompt and I/O errors abort with `Err`.
pub fn run_trial(
    config: &RunConfig,
    spec: &TrialSpec,
    backend: &dyn ChatBackend,
    sink: &mut dyn Write,
) -> Result<Trial, SimError> {
    let schema = load_schema();
    let scenario = config.persona.scenario(spec.scenario);
    let trial_id = spec.trial_id();
    let deterministic = backend.is_deterministic();

    let prompt_opts = PromptOptions {
        seed: spec.seed,
        annotate: true,
        terminator: config.terminator.clone(),
    };
    let personality_prompt = build_system_prompt(
        &config.persona.profile(spec.personality),
        scenario,
        schema,
        &config.catalog,
        Speaker::Personality,
        &prompt_opts,
    )?;
    let generic_prompt = build_system_prompt(
        &PersonalityProfile::generic(),
        scenario,
        schema,
        &config.catalog,
        Speaker::Generic,
        &PromptOptions {
            annotate: config.generic_annotations,
            ..prompt_opts.clone()
        },
    )?;

    let mut entry = TrialEntry::pending(spec, &backend.descriptor());
    entry.started_at = now_stamp(deterministic);
    let mut history: Vec<AnnotatedUtterance> = Vec::new();
    let mut calls: BTreeMap<Speaker, usize> = BTreeMap::new();
    let questions = &scenario.fixed_questions;
    let asker = scenario.asking_side();
    let mut asked = 0;
    let mut failures_in_row = 0;
    let mut speaker = scenario.opening();
    let slots = scenario.max_turns.div_ceil(2);
    let path_label = format!("transcript {trial_id}");

    let mut failed = false;
    'turns: for turn in 0..scenario.max_turns {
        let is_asker = asker == Some(speaker);
        let question = (is_asker && asked < questions.len()).then(|| questions[asked].clone());
        let instruction = match &question {
            Some(q) => Some(format!(
                "In this turn, respond briefly to what was just said, if anything, then ask \
                 exactly this question: {q}"
            )),
            None if is_asker => Some(
                "All of your questions have been answered. Thank your partner and close the \
                 conversation."
                    .to_string(),
            ),
            None => None,
        };
        let prompt = match speaker {
            Speaker::Personality => &personality_prompt,
            Speaker::Generic => &generic_prompt,
        };
        let annotate = speaker == Speaker::Personality || config.generic_annotations;

        loop {
            let req = build_request(config, prompt, &history, speaker, instruction.clone());
            let call_index = calls.entry(speaker).or_insert(0);
            let ctx = CallContext {
                stream: Some(StreamKey {
                    trial_id: trial_id.clone(),
                    trial_index: spec.trial_index,
                    scenario: spec.scenario,
                    personality: spec.personality,
                    speaker,
                    turn_index: turn,
                    call_index: *call_index,
                    slots_per_trial: slots,
                }),
            };
            *call_index += 1;

            let outcome = backend
                .complete(&req, &ctx)
                .map_err(|e| e.to_string())
                .and_then(|raw| {
                    interpret(&raw, annotate, config, schema)
                        .map(|(ann, ended)| (raw, ann, ended))
                        .map_err(|e| e.to_string())
                });
            match outcome {
                Ok((raw, mut ann, ended)) => {
                    if let Some(q) = &question {
                        if !contains_question(&ann.text, q) {
                            ann.text = format!("{} {}", ann.text, q.trim());
                        }
                        asked += 1;
                    }
                    for w in ann.warnings.drain(..) {
                        entry.errors.push(format!("turn {turn}: warning: {w}"));
                    }
                    ann.raw = raw;
                    let u = ann.into_utterance(speaker, turn);
                    let mut line = serde_json::to_string(&TranscriptRecord::new(&trial_id, &u))
                        .expect("record serializes");
                    line.push('\n');
                    let ioe = |source| SimError::Io { path: path_label.clone(), source };
                    sink.write_all(line.as_bytes()).map_err(ioe)?;
                    sink.flush().map_err(|source| SimError::Io { path: path_label.clone(), source })?;
                    history.push(u);
                    failures_in_row = 0;
                    if ended && asked == questions.len() {
                        break 'turns;
                    }
                    break;
                }
                Err(e) => {
                    tracing::warn!("{trial_id} turn {turn}: {e}");
                    entry.errors.push(format!("turn {turn}: {e}"));
                    failures_in_row += 1;
                    if failures_in_row >= config.max_consecutive_failures {
                        failed = true;
                        break 'turns;
                    }
                }
            }
        }
        speaker = speaker.other();
    }

    entry.status = if failed { TrialStatus::Failed } else { TrialStatus::Complete };
    entry.utterances = history.len();
    entry.ended_at = now_stamp(deterministic);
    Ok(Trial {
        entry,
        utterances: history,
    })
}

/// Parses one raw response; returns the annotation and whether it carried the end marker.
fn interpret(
    raw: &str,
    annotate: bool,
    config: &RunConfig,
    schema: &ActionSchema,
) -> Result<(Annotation, bool), MarkupError> {
    let ended = raw.contains(&config.terminator);
    let cleaned = raw.replace(&config.terminator, " ");
    let ann = if annotate {
        let format = if cleaned.contains('{') {
            MarkupFormat::StructuredJson
        } else {
            MarkupFormat::InlineTags
        };
        parse_annotated_with(schema, &cleaned, format, ParseOptions { lenient: config.lenient })?
    } else {
        let text = spoken_text(&cleaned);
        if text.is_empty() {
            return Err(MarkupError::EmptyText);
        }
        Annotation {
            text,
            actions: ActionSet::default(),
            raw: cleaned,
            warnings: Vec::new(),
        }
    };
    Ok((ann, ended))
}

/// Name for a fresh run directory: UTC timestamp plus config hash, or
/// `scripted-<hash>` for deterministic backends so reruns land in the same place.
pub fn run_dir_name(config: &RunConfig, deterministic: bool) -> String {
    let hash = &config.config_hash()[..12];
    if deterministic {
        format!("scripted-{hash}")
    } else {
        format!("{}-{hash}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub run_dir: PathBuf,
    /// Trials run in this invocation, in manifest order.
    pub executed: Vec<String>,
    pub failed: Vec<String>,
    pub manifest: Manifest,
}

fn line_count(path: &Path) -> Option<usize> {
    let src = std::fs::read_to_string(path).ok()?;
    Some(src.lines().filter(|l| !l.trim().is_empty()).count())
}

/// Runs (or resumes) the full factorial experiment in `run_dir`.
///
/// Trials already complete on disk are skipped. Up to `jobs` trials run at
/// once; the manifest is rewritten atomically after each trial finishes.
pub fn run_experiment(
    config: &RunConfig,
    backend: &dyn ChatBackend,
    run_dir: &Path,
    jobs: usize,
) -> Result<ExperimentOutcome, SimError> {
    config.validate()?;
    let hash = config.config_hash();
    let trials_dir = run_dir.join(TRIALS_DIR);
    std::fs::create_dir_all(&trials_dir).map_err(io_err(&trials_dir))?;

    let mut manifest = if run_dir.join(MANIFEST_FILE).exists() {
        let m = Manifest::load(run_dir)?;
        if m.config_hash != hash {
            return Err(SimError::ConfigMismatch {
                dir: run_dir.display().to_string(),
                found: m.config_hash,
                expected: hash,
            });
        }
        m
    } else {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            config_hash: hash,
            config: config.clone(),
            trials: Vec::new(),
        }
    };
    manifest.config = config.clone();

    let specs = config.trial_specs();
    let mut existing: BTreeMap<String, TrialEntry> = manifest
        .trials
        .drain(..)
        .map(|e| (e.trial_id.clone(), e))
        .collect();
    let mut todo = Vec::new();
    for spec in &specs {
        let id = spec.trial_id();
        let entry = match existing.remove(&id) {
            Some(e)
                if e.status == TrialStatus::Complete
                    && line_count(&run_dir.join(&e.file)) == Some(e.utterances) =>
            {
                e
            }
            _ => {
                todo.push(*spec);
                TrialEntry::pending(spec, &backend.descriptor())
            }
        };
        manifest.trials.push(entry);
    }
    // keep trials from earlier, larger runs
    manifest.trials.extend(existing.into_values());
    manifest.save(run_dir)?;

    let manifest = Mutex::new(manifest);
    let next = AtomicUsize::new(0);
    let first_error: Mutex<Option<SimError>> = Mutex::new(None);
    let jobs = jobs.clamp(1, todo.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = todo.get(i) else { break };
                if first_error.lock().unwrap_or_else(|e| e.into_inner()).is_some() {
                    break;
                }
                let result = execute(config, spec, backend, run_dir).and_then(|trial| {
                    let mut m = manifest.lock().unwrap_or_else(|e| e.into_inner());
                    if let Some(slot) =
                        m.trials.iter_mut().find(|e| e.trial_id == trial.entry.trial_id)
                    {
                        *slot = trial.entry;
                    }
                    m.save(run_dir)
                });
                if let Err(e) = result {
                    first_error
                        .lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(e);
    }
    let manifest = manifest.into_inner().unwrap_or_else(|e| e.into_inner());
    let failed = manifest
        .trials
        .iter()
        .filter(|e| e.status != TrialStatus::Complete)
        .map(|e| e.trial_id.clone())
        .collect();
    Ok(ExperimentOutcome {
        run_dir: run_dir.to_path_buf(),
        executed: todo.iter().map(TrialSpec::trial_id).collect(),
        failed,
        manifest,
    })
}

fn execute(
    config: &RunConfig,
    spec: &TrialSpec,
    backend: &dyn ChatBackend,
    run_dir: &Path,
) -> Result<Trial, SimError> {
    let path = run_dir.join(TRIALS_DIR).join(format!("{}.jsonl", spec.trial_id()));
    let mut file = File::create(&path).map_err(io_err(&path))?;
    let trial = run_trial(config, spec, backend, &mut file)?;
    file.sync_all().map_err(io_err(&path))?;
    Ok(trial)
}

/// A loaded run directory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub run_dir: PathBuf,
    pub manifest: Manifest,
    pub trials: Vec<Trial>,
}

impl Corpus {
    /// Loads the manifest and every complete trial, refusing corpora whose
    /// manifest or transcripts disagree.
    pub fn load(run_dir: &Path) -> Result<Corpus, SimError> {
        let manifest = Manifest::load(run_dir)?;
        manifest.verify_hash(run_dir)?;
        let mut trials = Vec::new();
        for entry in &manifest.trials {
            if entry.status != TrialStatus::Complete {
                continue;
            }
            let path = run_dir.join(&entry.file);
            let records = read_transcript(&path)?;
            let corrupt = |message: String| SimError::Corrupt {
                path: path.display().to_string(),
                message,
            };
            if records.len() != entry.utterances {
                return Err(corrupt(format!(
                    "manifest lists {} utterances, file has {}",
                    entry.utterances,
                    records.len()
                )));
            }
            if let Some(r) = records.iter().find(|r| r.trial_id != entry.trial_id) {
                return Err(corrupt(format!("record for trial {} in wrong file", r.trial_id)));
            }
            trials.push(Trial {
                entry: entry.clone(),
                utterances: records.into_iter().map(TranscriptRecord::into_utterance).collect(),
            });
        }
        Ok(Corpus {
            run_dir: run_dir.to_path_buf(),
            manifest,
            trials,
        })
    }

    pub fn scenario(&self, kind: ScenarioKind) -> &ScenarioConfig {
        self.manifest.config.persona.scenario(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub trial_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub trials_checked: usize,
    pub utterances_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks turn caps, alternation, schema validity and the question protocol
/// of every persisted trial. Only an unreadable manifest is an `Err`.
pub fn validate_run(run_dir: &Path) -> Result<ValidationReport, SimError> {
    let manifest = Manifest::load(run_dir)?;
    let schema = load_schema();
    let mut report = ValidationReport::default();
    if let Err(e) = manifest.verify_hash(run_dir) {
        report.violations.push(Violation {
            trial_id: "(manifest)".into(),
            message: e.to_string(),
        });
    }
    for entry in &manifest.trials {
        let mut flag = |message: String| {
            report.violations.push(Violation {
                trial_id: entry.trial_id.clone(),
                message,
            })
        };
        let path = run_dir.join(&entry.file);
        if !path.exists() {
            if entry.status == TrialStatus::Complete {
                flag(format!("transcript {} is missing", entry.file));
            }
            continue;
        }
        let records = match read_transcript(&path) {
            Ok(r) => r,
            Err(e) => {
                flag(e.to_string());
                continue;
            }
        };
        let scenario = manifest.config.persona.scenario(entry.scenario);
        for message in check_trial(entry, &records, scenario, schema) {
            flag(message);
        }
        report.trials_checked += 1;
        report.utterances_checked += records.len();
    }
    Ok(report)
}

fn check_trial(
    entry: &TrialEntry,
    records: &[TranscriptRecord],
    scenario: &ScenarioConfig,
    schema: &ActionSchema,
) -> Vec<String> {
    let mut out = Vec::new();
    if records.len() > scenario.max_turns {
        out.push(format!(
            "{} utterances exceed the {} cap of {}",
            records.len(),
            scenario.kind,
            scenario.max_turns
        ));
    }
    if entry.status == TrialStatus::Complete && records.len() != entry.utterances {
        out.push(format!(
            "manifest lists {} utterances, transcript has {}",
            entry.utterances,
            records.len()
        ));
    }
    for (i, r) in records.iter().enumerate() {
        if r.trial_id != entry.trial_id {
            out.push(format!("turn {i}: record belongs to {}", r.trial_id));
        }
        if r.turn_index != i {
            out.push(format!("turn {i}: turn_index is {}", r.turn_index));
        }
        let expected = if i % 2 == 0 { scenario.opening() } else { scenario.opening().other() };
        if r.speaker != expected {
            out.push(format!("turn {i}: expected {expected} to speak, found {}", r.speaker));
        }
        if let Err(e) = r.clone().into_utterance().validate(schema) {
            out.push(format!("turn {i}: {e}"));
        }
    }
    if let (Some(asker), TrialStatus::Complete) = (scenario.asking_side(), entry.status) {
        let asker_turns: Vec<(usize, &TranscriptRecord)> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.speaker == asker)
            .collect();
        let mut last = None;
        for (qi, q) in scenario.fixed_questions.iter().enumerate() {
            let hits: Vec<usize> = asker_turns
                .iter()
                .filter(|(_, r)| contains_question(&r.text, q))
                .map(|(i, _)| *i)
                .collect();
            match hits.as_slice() {
                [one] => {
                    if last.is_some_and(|l| *one <= l) {
                        out.push(format!("question {} asked out of order", qi + 1));
                    }
                    last = Some(*one);
                }
                [] => out.push(format!("question {} never asked", qi + 1)),
                _ => out.push(format!("question {} asked {} times", qi + 1, hits.len())),
            }
        }
    }
    out
}
