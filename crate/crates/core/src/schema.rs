//! Nonverbal action vocabulary and the utterance markup formats.
//!
//! The vocabulary is fixed at 29 actions across three modalities. Each action
//! carries a polarity (which end of the extraversion axis it signals), an
//! optional opposite-intensity counterpart, and an optional exclusion group:
//! two actions from the same group cannot appear on one utterance.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Body,
    Voice,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Face, Modality::Body, Modality::Voice];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Body => "body",
            Modality::Voice => "voice",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Modality::Face => "Face",
            Modality::Body => "Body",
            Modality::Voice => "Voice",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    ExtrovertLeaning,
    IntrovertLeaning,
    Neutral,
}

impl Polarity {
    pub fn opposite(self) -> Polarity {
        match self {
            Polarity::ExtrovertLeaning => Polarity::IntrovertLeaning,
            Polarity::IntrovertLeaning => Polarity::ExtrovertLeaning,
            Polarity::Neutral => Polarity::Neutral,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionGroup {
    Gaze,
    Volume,
    Pace,
}

impl fmt::Display for ExclusionGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionGroup::Gaze => "gaze",
            ExclusionGroup::Volume => "volume",
            ExclusionGroup::Pace => "pace",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NonverbalAction {
    pub name: &'static str,
    pub modality: Modality,
    pub polarity: Polarity,
    pub intensity_pair: Option<&'static str>,
    pub exclusion_group: Option<ExclusionGroup>,
}

const fn action(
    name: &'static str,
    modality: Modality,
    polarity: Polarity,
    intensity_pair: Option<&'static str>,
    exclusion_group: Option<ExclusionGroup>,
) -> NonverbalAction {
    NonverbalAction {
        name,
        modality,
        polarity,
        intensity_pair,
        exclusion_group,
    }
}

use ExclusionGroup as G;
use Modality::{Body, Face, Voice};
use Polarity::{ExtrovertLeaning as Ext, IntrovertLeaning as Int, Neutral};

// Table order within each modality; this is also the script/serialization order.
const ACTIONS: [NonverbalAction; 29] = [
    action("Avert Gaze", Face, Int, Some("Make Eye Contact"), Some(G::Gaze)),
    action("Make Eye Contact", Face, Ext, Some("Avert Gaze"), Some(G::Gaze)),
    action("Coy Smile", Face, Int, Some("Smile Broadly"), None),
    action("Smile Broadly", Face, Ext, Some("Coy Smile"), None),
    action("Subtle Sadness", Face, Int, Some("Intense Sadness"), None),
    action("Intense Sadness", Face, Ext, Some("Subtle Sadness"), None),
    action("Mild Anger", Face, Int, Some("Strong Anger"), None),
    action("Strong Anger", Face, Ext, Some("Mild Anger"), None),
    action("Soft Surprise", Face, Int, Some("Extreme Surprise"), None),
    action("Extreme Surprise", Face, Ext, Some("Soft Surprise"), None),
    action("Static Eyebrows", Face, Neutral, None, None),
    action("Raise Eyebrows", Face, Neutral, None, None),
    action("Narrow Eyes", Face, Neutral, None, None),
    action("Nod", Body, Neutral, None, None),
    action("Shaking", Body, Neutral, None, None),
    action("Disagree", Body, Neutral, None, None),
    action("Agree", Body, Neutral, None, None),
    action("Gesture Narrowly", Body, Int, Some("Gesture Widely"), None),
    action("Gesture Widely", Body, Ext, Some("Gesture Narrowly"), None),
    action("Gesture Slowly", Body, Int, Some("Gesture Fastly"), None),
    action("Gesture Fastly", Body, Ext, Some("Gesture Slowly"), None),
    action("Give Thumbs Up", Body, Neutral, None, None),
    action("Head Tilting", Body, Neutral, None, None),
    action("Lean Forward", Body, Ext, Some("Lean Backward"), None),
    action("Lean Backward", Body, Int, Some("Lean Forward"), None),
    action("Loud Volume", Voice, Ext, Some("Small Volume"), Some(G::Volume)),
    action("Small Volume", Voice, Int, Some("Loud Volume"), Some(G::Volume)),
    action("Fast Pace", Voice, Ext, Some("Slow Pace"), Some(G::Pace)),
    action("Slow Pace", Voice, Int, Some("Fast Pace"), Some(G::Pace)),
];

/// Lowercases and collapses internal whitespace, the lookup key for action names.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The immutable action vocabulary.
#[derive(Debug)]
pub struct ActionSchema {
    actions: Vec<NonverbalAction>,
    index: HashMap<String, usize>,
}

static SCHEMA: LazyLock<ActionSchema> = LazyLock::new(|| {
    let schema = ActionSchema::from_actions(ACTIONS.to_vec());
    if let Err(e) = schema.check() {
        panic!("embedded action schema is corrupt: {e}");
    }
    schema
});

/// Returns the compiled-in 29-action schema.
pub fn load_schema() -> &'static ActionSchema {
    &SCHEMA
}

impl ActionSchema {
    fn from_actions(actions: Vec<NonverbalAction>) -> Self {
        let index = actions
            .iter()
            .enumerate()
            .map(|(i, a)| (normalize_name(a.name), i))
            .collect();
        ActionSchema { actions, index }
    }

    /// Structural self-check of the vocabulary invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.actions.len() != 29 || self.index.len() != 29 {
            return Err(format!("expected 29 distinct actions, found {}", self.index.len()));
        }
        for a in &self.actions {
            if let Some(p) = a.intensity_pair {
                let other = self.get(p).ok_or_else(|| format!("{}: unknown pair {p}", a.name))?;
                if other.intensity_pair != Some(a.name) {
                    return Err(format!("{} <-> {p} is not symmetric", a.name));
                }
                if other.polarity != a.polarity.opposite() || a.polarity == Polarity::Neutral {
                    return Err(format!("{} <-> {p} polarities are not opposite", a.name));
                }
            }
            if a.modality == Modality::Voice && a.exclusion_group.is_none() {
                return Err(format!("voice action {} has no exclusion group", a.name));
            }
        }
        Ok(())
    }

    pub fn actions(&self) -> &[NonverbalAction] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Case- and whitespace-insensitive lookup.
    pub fn get(&self, name: &str) -> Option<&NonverbalAction> {
        self.position(name).map(|i| &self.actions[i])
    }

    /// Position of the action in schema order.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(&normalize_name(name)).copied()
    }

    pub fn by_modality(&self, modality: Modality) -> impl Iterator<Item = &NonverbalAction> {
        self.actions.iter().filter(move |a| a.modality == modality)
    }

    pub fn count_by_modality(&self) -> BTreeMap<Modality, usize> {
        let mut counts = BTreeMap::new();
        for a in &self.actions {
            *counts.entry(a.modality).or_insert(0) += 1;
        }
        counts
    }

    pub fn pair_of(&self, name: &str) -> Option<&'static str> {
        self.get(name).and_then(|a| a.intensity_pair)
    }

    pub fn exclusion_group(&self, name: &str) -> Option<ExclusionGroup> {
        self.get(name).and_then(|a| a.exclusion_group)
    }

    /// Intensity/direction pairs as (extrovert-leaning, introvert-leaning), schema order.
    pub fn polarity_pairs(&self) -> Vec<(&'static str, &'static str)> {
        self.actions
            .iter()
            .filter(|a| a.polarity == Polarity::ExtrovertLeaning)
            .filter_map(|a| a.intensity_pair.map(|p| (a.name, p)))
            .collect()
    }
}

/// Which side of the dialogue produced an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Personality,
    Generic,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::Personality => Speaker::Generic,
            Speaker::Generic => Speaker::Personality,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Personality => "personality",
            Speaker::Generic => "generic",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Canonical action names grouped by modality, each list in schema order.
///
/// This is also the on-disk shape (`{"face":[..],"body":[..],"voice":[..]}`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet {
    #[serde(default)]
    pub face: Vec<String>,
    #[serde(default)]
    pub body: Vec<String>,
    #[serde(default)]
    pub voice: Vec<String>,
}

impl ActionSet {
    /// Builds a set from canonical names, deduplicating and ordering by schema position.
    /// Names must already resolve in the schema.
    fn from_positions(schema: &ActionSchema, mut positions: Vec<usize>) -> Self {
        positions.sort_unstable();
        positions.dedup();
        let mut set = ActionSet::default();
        for p in positions {
            let a = &schema.actions[p];
            set.list_mut(a.modality).push(a.name.to_string());
        }
        set
    }

    pub fn list(&self, modality: Modality) -> &[String] {
        match modality {
            Modality::Face => &self.face,
            Modality::Body => &self.body,
            Modality::Voice => &self.voice,
        }
    }

    fn list_mut(&mut self, modality: Modality) -> &mut Vec<String> {
        match modality {
            Modality::Face => &mut self.face,
            Modality::Body => &mut self.body,
            Modality::Voice => &mut self.voice,
        }
    }

    /// All names, face then body then voice.
    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.face
            .iter()
            .chain(&self.body)
            .chain(&self.voice)
            .map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        let key = normalize_name(name);
        self.iter().any(|n| normalize_name(n) == key)
    }

    pub fn len(&self) -> usize {
        self.face.len() + self.body.len() + self.voice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A parsed LLM payload before it is placed in a dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub text: String,
    pub actions: ActionSet,
    pub raw: String,
    /// Non-fatal findings (only populated in lenient mode).
    pub warnings: Vec<String>,
}

impl Annotation {
    pub fn into_utterance(self, speaker: Speaker, turn_index: usize) -> AnnotatedUtterance {
        AnnotatedUtterance {
            speaker,
            turn_index,
            text: self.text,
            actions: self.actions,
            raw: self.raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    pub speaker: Speaker,
    pub turn_index: usize,
    pub text: String,
    pub actions: ActionSet,
    pub raw: String,
}

impl AnnotatedUtterance {
    /// Checks the utterance invariants against the schema.
    pub fn validate(&self, schema: &ActionSchema) -> Result<(), MarkupError> {
        if self.text.trim().is_empty() {
            return Err(MarkupError::EmptyText);
        }
        let mut positions = Vec::with_capacity(self.actions.len());
        for m in Modality::ALL {
            for name in self.actions.list(m) {
                let p = schema
                    .position(name)
                    .ok_or_else(|| MarkupError::UnknownAction(name.clone()))?;
                if schema.actions[p].modality != m {
                    return Err(MarkupError::MalformedPayload(format!(
                        "{name} is a {} action, listed under {}",
                        schema.actions[p].modality.as_str(),
                        m.as_str()
                    )));
                }
                positions.push(p);
            }
        }
        check_exclusions(schema, &positions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkupFormat {
    StructuredJson,
    InlineTags,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MarkupError {
    #[error("unknown nonverbal action: {0:?}")]
    UnknownAction(String),
    #[error("actions {actions:?} share exclusion group {group}")]
    ExclusionViolation {
        group: ExclusionGroup,
        actions: Vec<String>,
    },
    #[error("utterance text is empty after removing tags")]
    EmptyText,
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Downgrade unknown actions to warnings; the tag survives only in `raw`.
    pub lenient: bool,
}

pub fn parse_annotated(raw: &str, format: MarkupFormat) -> Result<Annotation, MarkupError> {
    parse_annotated_with(load_schema(), raw, format, ParseOptions::default())
}

pub fn parse_annotated_with(
    schema: &ActionSchema,
    raw: &str,
    format: MarkupFormat,
    opts: ParseOptions,
) -> Result<Annotation, MarkupError> {
    if raw.trim().is_empty() {
        return Err(MarkupError::MalformedPayload("payload is empty".into()));
    }
    let (text, names) = match format {
        MarkupFormat::StructuredJson => read_structured(raw)?,
        MarkupFormat::InlineTags => read_inline(raw),
    };

    let mut warnings = Vec::new();
    let mut positions = Vec::with_capacity(names.len());
    for (listed_under, name) in names {
        match schema.position(&name) {
            Some(p) => {
                let actual = schema.actions[p].modality;
                if listed_under.is_some_and(|m| m != actual) {
                    return Err(MarkupError::MalformedPayload(format!(
                        "{} is a {} action, listed under {}",
                        schema.actions[p].name,
                        actual.as_str(),
                        listed_under.map_or("", Modality::as_str)
                    )));
                }
                positions.push(p);
            }
            None if opts.lenient => warnings.push(format!("unknown action {name:?} ignored")),
            None => return Err(MarkupError::UnknownAction(name)),
        }
    }
    check_exclusions(schema, &positions)?;

    let text = collapse_whitespace(&text);
    if text.is_empty() {
        return Err(MarkupError::EmptyText);
    }
    Ok(Annotation {
        text,
        actions: ActionSet::from_positions(schema, positions),
        raw: raw.to_string(),
        warnings,
    })
}

fn check_exclusions(schema: &ActionSchema, positions: &[usize]) -> Result<(), MarkupError> {
    let mut groups: BTreeMap<ExclusionGroup, Vec<usize>> = BTreeMap::new();
    for &p in positions {
        if let Some(g) = schema.actions[p].exclusion_group {
            let members = groups.entry(g).or_default();
            if !members.contains(&p) {
                members.push(p);
            }
        }
    }
    for (group, mut members) in groups {
        if members.len() > 1 {
            members.sort_unstable();
            return Err(MarkupError::ExclusionViolation {
                group,
                actions: members
                    .into_iter()
                    .map(|p| schema.actions[p].name.to_string())
                    .collect(),
            });
        }
    }
    Ok(())
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Deserialize)]
struct StructuredPayload {
    text: String,
    #[serde(default)]
    face: Vec<String>,
    #[serde(default)]
    body: Vec<String>,
    #[serde(default)]
    voice: Vec<String>,
}

type ListedNames = Vec<(Option<Modality>, String)>;

/// Reads the first JSON object in the payload, ignoring prose or code fences around it.
fn read_structured(raw: &str) -> Result<(String, ListedNames), MarkupError> {
    let mut last_err = None;
    for (start, _) in raw.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&raw[start..]).into_iter::<StructuredPayload>();
        match stream.next() {
            Some(Ok(p)) => {
                let names = [
                    (Modality::Face, p.face),
                    (Modality::Body, p.body),
                    (Modality::Voice, p.voice),
                ]
                .into_iter()
                .flat_map(|(m, list)| list.into_iter().map(move |n| (Some(m), n)))
                .collect();
                return Ok((p.text, names));
            }
            Some(Err(e)) => last_err = Some(e.to_string()),
            None => {}
        }
    }
    Err(MarkupError::MalformedPayload(
        last_err.unwrap_or_else(|| "no JSON object found".into()),
    ))
}

/// Parenthesized groups that look like labels: 1-3 words of letters only.
fn looks_like_tag(inner: &str) -> bool {
    let words: Vec<&str> = inner.split_whitespace().collect();
    !words.is_empty()
        && words.len() <= 3
        && words.iter().all(|w| w.chars().all(char::is_alphabetic))
}

/// Extracts `(Label)` tags. A group that matches a schema name, or looks like a
/// label, is removed from the text; other parentheticals stay as prose.
fn read_inline(raw: &str) -> (String, ListedNames) {
    let schema = load_schema();
    let mut text = String::with_capacity(raw.len());
    let mut names = Vec::new();
    let mut rest = raw;
    while let Some(open) = rest.find('(') {
        let Some(close_rel) = rest[open + 1..].find(')') else {
            break;
        };
        let close = open + 1 + close_rel;
        let inner = &rest[open + 1..close];
        text.push_str(&rest[..open]);
        if schema.get(inner).is_some() || looks_like_tag(inner) {
            names.push((None, collapse_whitespace(inner)));
            text.push(' ');
        } else {
            text.push_str(&rest[open..=close]);
        }
        rest = &rest[close + 1..];
    }
    text.push_str(rest);
    (tidy_punctuation(&collapse_whitespace(&text)), names)
}

/// Removes the space a stripped tag leaves in front of trailing punctuation.
fn tidy_punctuation(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c == ' ' && chars.peek().is_some_and(|n| matches!(n, '.' | ',' | '!' | '?' | ';' | ':')) {
            continue;
        }
        out.push(c);
    }
    out
}

/// Renders an annotation back into the given markup format.
pub fn serialize_annotation(text: &str, actions: &ActionSet, format: MarkupFormat) -> String {
    match format {
        MarkupFormat::StructuredJson => serde_json::json!({
            "text": text,
            "face": actions.face,
            "body": actions.body,
            "voice": actions.voice,
        })
        .to_string(),
        MarkupFormat::InlineTags => {
            let mut out = text.to_string();
            for name in actions.iter() {
                out.push_str(" (");
                out.push_str(name);
                out.push(')');
            }
            out
        }
    }
}

/// Strips any markup and returns only the spoken words.
pub fn spoken_text(raw: &str) -> String {
    if let Ok((text, _)) = read_structured(raw) {
        let t = collapse_whitespace(&text);
        if !t.is_empty() {
            return t;
        }
    }
    read_inline(raw).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStart {
    Utterance,
    Immediate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub modality: Modality,
    pub action: String,
    pub start: EventStart,
}

/// Utterance-level playback instructions for a renderer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorScript {
    pub speaker: Speaker,
    pub turn_index: usize,
    pub events: Vec<ScriptEvent>,
}

/// Orders the utterance's actions by modality then schema order; every event
/// starts with the utterance.
pub fn compile_behavior_script(u: &AnnotatedUtterance) -> Result<BehaviorScript, MarkupError> {
    let schema = load_schema();
    u.validate(schema)?;
    let mut positions: Vec<usize> = u
        .actions
        .iter()
        .filter_map(|n| schema.position(n))
        .collect();
    positions.sort_by_key(|&p| (schema.actions[p].modality, p));
    positions.dedup();
    Ok(BehaviorScript {
        speaker: u.speaker,
        turn_index: u.turn_index,
        events: positions
            .into_iter()
            .map(|p| ScriptEvent {
                modality: schema.actions[p].modality,
                action: schema.actions[p].name.to_string(),
                start: EventStart::Immediate,
            })
            .collect(),
    })
}
