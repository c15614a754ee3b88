//! Persona profiles, scenario configuration and system-prompt assembly.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::DescriptionCatalog;
use crate::schema::{ActionSchema, ExclusionGroup, Modality, Speaker};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("description catalog has no entry for: {}", .0.join(", "))]
    CatalogIncomplete(Vec<String>),
    #[error("invalid persona config: {0}")]
    InvalidConfig(String),
    #[error("reading config {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Personality {
    Extrovert,
    Introvert,
    Generic,
}

impl Personality {
    pub fn as_str(self) -> &'static str {
        match self {
            Personality::Extrovert => "extrovert",
            Personality::Introvert => "introvert",
            Personality::Generic => "generic",
        }
    }

    /// Short column label used in reports.
    pub fn abbrev(self) -> &'static str {
        match self {
            Personality::Extrovert => "EXT",
            Personality::Introvert => "INT",
            Personality::Generic => "GEN",
        }
    }
}

impl fmt::Display for Personality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Negotiation,
    #[serde(rename = "icebreaking")]
    IceBreaking,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 2] = [ScenarioKind::Negotiation, ScenarioKind::IceBreaking];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Negotiation => "negotiation",
            ScenarioKind::IceBreaking => "icebreaking",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ScenarioKind::Negotiation => "Negotiation",
            ScenarioKind::IceBreaking => "Ice-breaking",
        }
    }

    /// Utterance cap for the scenario.
    pub fn canonical_max_turns(self) -> usize {
        match self {
            ScenarioKind::Negotiation => 10,
            ScenarioKind::IceBreaking => 8,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guidance {
    pub face: String,
    pub body: String,
    pub voice: String,
}

impl Guidance {
    fn get(&self, m: Modality) -> &str {
        match m {
            Modality::Face => &self.face,
            Modality::Body => &self.body,
            Modality::Voice => &self.voice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileText {
    pub trait_definition: String,
    pub guidance: Guidance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PersonalityProfile {
    pub label: Personality,
    pub trait_definition: String,
    /// Per-modality behavior hints; empty for the generic profile.
    pub behavioral_guidance: BTreeMap<Modality, String>,
}

impl PersonalityProfile {
    pub fn generic() -> Self {
        PersonalityProfile {
            label: Personality::Generic,
            trait_definition: String::new(),
            behavioral_guidance: BTreeMap::new(),
        }
    }

    fn from_text(label: Personality, text: &ProfileText) -> Self {
        PersonalityProfile {
            label,
            trait_definition: text.trait_definition.trim().to_string(),
            behavioral_guidance: Modality::ALL
                .into_iter()
                .map(|m| (m, text.guidance.get(m).trim().to_string()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub max_turns: usize,
    pub trials: usize,
    pub opening_speaker: Speaker,
    pub narrative: String,
    #[serde(default)]
    pub fixed_questions: Vec<String>,
    pub personality_role: RoleSpec,
    pub generic_role: RoleSpec,
    /// Personality agent plays the generic role (and opens when the generic side would).
    #[serde(default)]
    pub swap_roles: bool,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |m: String| Err(PromptError::InvalidConfig(format!("{}: {m}", self.kind)));
        if self.max_turns != self.kind.canonical_max_turns() {
            return bad(format!(
                "max_turns must be {} (got {})",
                self.kind.canonical_max_turns(),
                self.max_turns
            ));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        match self.kind {
            ScenarioKind::IceBreaking if self.fixed_questions.len() != 3 => {
                return bad(format!("needs 3 fixed questions (got {})", self.fixed_questions.len()))
            }
            ScenarioKind::Negotiation if !self.fixed_questions.is_empty() => {
                return bad("takes no fixed questions".into())
            }
            _ => {}
        }
        if self.fixed_questions.iter().any(|q| q.trim().is_empty()) {
            return bad("fixed questions must be non-empty".into());
        }
        if self.personality_role.name.trim().is_empty() || self.generic_role.name.trim().is_empty() {
            return bad("role names must be non-empty".into());
        }
        Ok(())
    }

    pub fn role_for(&self, side: Speaker) -> &RoleSpec {
        match (side, self.swap_roles) {
            (Speaker::Personality, false) | (Speaker::Generic, true) => &self.personality_role,
            _ => &self.generic_role,
        }
    }

    pub fn opening(&self) -> Speaker {
        if self.swap_roles {
            self.opening_speaker.other()
        } else {
            self.opening_speaker
        }
    }

    /// The side that asks the fixed questions, if the scenario has any.
    pub fn asking_side(&self) -> Option<Speaker> {
        if self.fixed_questions.is_empty() {
            None
        } else if self.swap_roles {
            Some(Speaker::Personality)
        } else {
            Some(Speaker::Generic)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profiles {
    pub extrovert: ProfileText,
    pub introvert: ProfileText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenarios {
    pub negotiation: ScenarioConfig,
    pub icebreaking: ScenarioConfig,
}

/// Everything a prompt is assembled from apart from the schema and catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaConfig {
    pub profiles: Profiles,
    pub scenarios: Scenarios,
}

const DEFAULT_PERSONA: &str = include_str!("../data/persona.toml");

impl Default for PersonaConfig {
    fn default() -> Self {
        PersonaConfig::from_toml(DEFAULT_PERSONA).expect("bundled persona config is valid")
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl PersonaConfig {
    pub fn from_toml(src: &str) -> Result<Self, PromptError> {
        let cfg: PersonaConfig =
            toml::from_str(src).map_err(|e| PromptError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults overlaid with the tables of a user config file.
    pub fn with_overrides(src: &str) -> Result<Self, PromptError> {
        let mut base: toml::Table = DEFAULT_PERSONA.parse().expect("bundled persona config");
        let overlay: toml::Table =
            src.parse().map_err(|e: toml::de::Error| PromptError::InvalidConfig(e.to_string()))?;
        merge_tables(&mut base, overlay);
        let cfg: PersonaConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| PromptError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let src = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        PersonaConfig::with_overrides(&src)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let (e, i) = (&self.profiles.extrovert, &self.profiles.introvert);
        if e.trait_definition.trim().is_empty() || i.trait_definition.trim().is_empty() {
            return Err(PromptError::InvalidConfig("trait definitions must be non-empty".into()));
        }
        if e.trait_definition.trim() == i.trait_definition.trim() {
            return Err(PromptError::InvalidConfig(
                "extrovert and introvert trait definitions must differ".into(),
            ));
        }
        for (key, s) in [
            (ScenarioKind::Negotiation, &self.scenarios.negotiation),
            (ScenarioKind::IceBreaking, &self.scenarios.icebreaking),
        ] {
            if s.kind != key {
                return Err(PromptError::InvalidConfig(format!(
                    "scenario table {key} declares kind {}",
                    s.kind
                )));
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn profile(&self, label: Personality) -> PersonalityProfile {
        match label {
            Personality::Extrovert => PersonalityProfile::from_text(label, &self.profiles.extrovert),
            Personality::Introvert => PersonalityProfile::from_text(label, &self.profiles.introvert),
            Personality::Generic => PersonalityProfile::generic(),
        }
    }

    pub fn scenario(&self, kind: ScenarioKind) -> &ScenarioConfig {
        match kind {
            ScenarioKind::Negotiation => &self.scenarios.negotiation,
            ScenarioKind::IceBreaking => &self.scenarios.icebreaking,
        }
    }

    pub fn scenario_mut(&mut self, kind: ScenarioKind) -> &mut ScenarioConfig {
        match kind {
            ScenarioKind::Negotiation => &mut self.scenarios.negotiation,
            ScenarioKind::IceBreaking => &mut self.scenarios.icebreaking,
        }
    }
}

/// The two built-in scenarios, negotiation first.
pub fn default_scenarios() -> [ScenarioConfig; 2] {
    let cfg = PersonaConfig::default();
    [cfg.scenarios.negotiation, cfg.scenarios.icebreaking]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    /// Seeds the choice of one clip description per action.
    pub seed: u64,
    /// Include the action list and the JSON output contract.
    pub annotate: bool,
    pub terminator: String,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            seed: 0,
            annotate: true,
            terminator: DEFAULT_TERMINATOR.to_string(),
        }
    }
}

pub const DEFAULT_TERMINATOR: &str = "<END>";

/// Assembles the system prompt for one side of a scenario.
pub fn build_system_prompt(
    profile: &PersonalityProfile,
    scenario: &ScenarioConfig,
    schema: &ActionSchema,
    catalog: &DescriptionCatalog,
    side: Speaker,
    opts: &PromptOptions,
) -> Result<String, PromptError> {
    let missing = catalog.missing(schema);
    if !missing.is_empty() {
        return Err(PromptError::CatalogIncomplete(missing));
    }
    let role = scenario.role_for(side);
    let mut p = String::new();
    p.push_str(&format!(
        "You are taking part in a spoken conversation as the {}.\n",
        role.name
    ));

    if profile.label != Personality::Generic {
        p.push_str("\n## Personality\n");
        p.push_str(&profile.trait_definition);
        p.push_str("\n\nNonverbal style:\n");
        for (m, hint) in &profile.behavioral_guidance {
            p.push_str(&format!("- {}: {hint}\n", m.title()));
        }
    }

    p.push_str("\n## Situation\n");
    p.push_str(scenario.narrative.trim());
    p.push_str("\n\n");
    p.push_str(role.description.trim());
    p.push('\n');
    if scenario.asking_side() == Some(side) {
        p.push_str(
            "\nAsk the following questions in this order, one question per turn, \
             and wait for the answer each time:\n",
        );
        for (i, q) in scenario.fixed_questions.iter().enumerate() {
            p.push_str(&format!("{}. {q}\n", i + 1));
        }
        p.push_str("After the last answer, thank your partner and close the conversation.\n");
    }
    p.push_str(&format!(
        "\nThe conversation lasts at most {} utterances in total. Each reply is one turn of \
         speech. When the conversation has reached its natural end, append {} to your final reply.\n",
        scenario.max_turns, opts.terminator
    ));

    if opts.annotate {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        p.push_str(
            "\n## Nonverbal actions\n\
             Along with your words, choose the nonverbal actions that fit what you say and how \
             you say it. Use only the actions below; each is followed by a description of the \
             animation that will play.\n",
        );
        for m in Modality::ALL {
            p.push_str(&format!("\n{}:\n", m.title()));
            for a in schema.by_modality(m) {
                let options = catalog.descriptions(a.name);
                let pick = &options[rng.random_range(0..options.len())];
                p.push_str(&format!("- {}: {pick}\n", a.name));
            }
        }
        let mut groups: BTreeMap<ExclusionGroup, Vec<&str>> = BTreeMap::new();
        for a in schema.actions() {
            if let Some(g) = a.exclusion_group {
                groups.entry(g).or_default().push(a.name);
            }
        }
        let groups: Vec<String> = groups.values().map(|names| names.join(" / ")).collect();
        p.push_str(&format!(
            "\nNever combine actions from the same group: {}.\n",
            groups.join("; ")
        ));
        p.push_str(
            "\n## Output format\n\
             Reply with one JSON object and nothing else:\n\
             {\"text\": \"<what you say>\", \"face\": [<face actions>], \"body\": [<body actions>], \
             \"voice\": [<voice actions>]}\n\
             Use the action names exactly as listed. Lists may be empty.\n",
        );
    } else {
        p.push_str(
            "\n## Output format\n\
             Reply with the words you say and nothing else. Do not describe actions or gestures.\n",
        );
    }
    Ok(p)
}
