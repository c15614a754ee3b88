//! Corpus analysis: lexical comparisons, extraversion classification and
//! nonverbal selection frequencies, each split by scenario and compared
//! between the extrovert and introvert personality agents.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{self, Document, Lexicon, LexiconError};
use crate::llm::GatewayError;
use crate::prompt::{Personality, ScenarioKind};
use crate::schema::{load_schema, Modality, Polarity, Speaker};
use crate::sim::{Corpus, SimError, Trial};
use crate::stats::{
    chi_square, significance_filter, stars, t_test, ChiSquareResult, Direction, TTestResult,
    TTestVariant,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const GROUPS: [Personality; 2] = [Personality::Extrovert, Personality::Introvert];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Corpus(#[from] SimError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("{scenario}: no scoreable {personality} documents")]
    MissingGroup {
        scenario: ScenarioKind,
        personality: Personality,
    },
    #[error("expected-direction map: {0}")]
    Expectations(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// What one document (and one frequency denominator) is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Utterance,
    Trial,
}

impl FromStr for Unit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "utterance" => Ok(Unit::Utterance),
            "trial" => Ok(Unit::Trial),
            _ => Err(format!("unknown unit {s:?}; expected utterance or trial")),
        }
    }
}

impl std::fmt::Display for Unit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Unit::Utterance => "utterance",
            Unit::Trial => "trial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub verbal: bool,
    pub classify: bool,
    pub nonverbal: bool,
    pub unit: Unit,
    pub alpha: f64,
    pub d_min: f64,
    pub variant: TTestVariant,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            verbal: true,
            classify: true,
            nonverbal: true,
            unit: Unit::Utterance,
            alpha: 0.05,
            d_min: 0.5,
            variant: TTestVariant::Welch,
        }
    }
}

// ---------------------------------------------------------------------------
// Expected directions

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub direction: Direction,
    pub source: String,
}

/// Category id -> direction prior literature expects for extraverts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpectedDirections(pub BTreeMap<String, Expectation>);

impl ExpectedDirections {
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/expected_directions.toml")).expect("bundled map parses")
    }

    pub fn parse(src: &str) -> Result<Self, AnalysisError> {
        toml::from_str(src).map_err(|e| AnalysisError::Expectations(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let src = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&src)
    }

    pub fn get(&self, category: &str) -> Option<&Expectation> {
        self.0.get(category)
    }
}

// ---------------------------------------------------------------------------
// Corpus slicing

/// Personality-agent utterances of one group, as (id, trial, turn, text, actions).
struct Slice<'a> {
    trials: Vec<&'a Trial>,
}

fn slice<'a>(corpus: &'a Corpus, scenario: ScenarioKind, personality: Personality) -> Slice<'a> {
    Slice {
        trials: corpus
            .trials
            .iter()
            .filter(|t| t.entry.scenario == scenario && t.entry.personality == personality)
            .collect(),
    }
}

fn scenarios_present(corpus: &Corpus) -> Vec<ScenarioKind> {
    let mut s: Vec<ScenarioKind> = corpus.trials.iter().map(|t| t.entry.scenario).collect();
    s.sort();
    s.dedup();
    s
}

fn documents(slice: &Slice<'_>, unit: Unit, group: &str) -> Vec<Document> {
    let mut out = Vec::new();
    for t in &slice.trials {
        let own = t.utterances.iter().filter(|u| u.speaker == Speaker::Personality);
        match unit {
            Unit::Utterance => out.extend(own.map(|u| Document {
                id: format!("{}#{}", t.entry.trial_id, u.turn_index),
                group: group.to_string(),
                text: u.text.clone(),
            })),
            Unit::Trial => out.push(Document {
                id: t.entry.trial_id.clone(),
                group: group.to_string(),
                text: own.map(|u| u.text.as_str()).collect::<Vec<_>>().join(" "),
            }),
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Verbal

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureComparison {
    pub feature: String,
    pub name: String,
    pub ext_mean: f64,
    pub int_mean: f64,
    pub test: Option<TTestResult>,
    /// Why no test could be run, when `test` is absent.
    pub error: Option<String>,
}

impl FeatureComparison {
    fn new(feature: &str, name: &str, ext: &[f64], int: &[f64], variant: TTestVariant) -> Self {
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let (test, error) = match t_test(ext, int, variant) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        FeatureComparison {
            feature: feature.to_string(),
            name: name.to_string(),
            ext_mean: mean(ext),
            int_mean: mean(int),
            test,
            error,
        }
    }

    /// "EXT > INT ***", "EXT = INT", or "n/a".
    pub fn test_label(&self) -> String {
        match (&self.test, self.error.as_deref()) {
            (Some(t), _) => match Direction::of(t.t) {
                Some(d) => format!("{d} {}", stars(t.p_two_sided)).trim_end().to_string(),
                None => "EXT = INT".into(),
            },
            (None, Some(e)) if e.starts_with("both groups have zero variance") => {
                let d = if self.ext_mean > self.int_mean { ">" } else { "<" };
                format!("EXT {d} INT (constant groups)")
            }
            _ => "n/a".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredFeature {
    pub feature: String,
    pub name: String,
    pub ext_mean: f64,
    pub int_mean: f64,
    pub p: f64,
    pub d: f64,
    pub direction: Direction,
    pub stars: String,
    pub expected: Option<Direction>,
    /// `None` when the expected-direction map has no entry.
    pub aligned: Option<bool>,
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalScenario {
    pub scenario: ScenarioKind,
    pub ext_documents: usize,
    pub int_documents: usize,
    pub excluded: Vec<String>,
    pub word_count: FeatureComparison,
    pub sentence_count: FeatureComparison,
    /// Every lexicon category, in lexicon order.
    pub features: Vec<FeatureComparison>,
    /// Features passing the significance filter, strongest effect first.
    pub filtered: Vec<FilteredFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalSection {
    pub lexicon: String,
    pub scenarios: Vec<VerbalScenario>,
}

/// Compares lexical features between personality groups, per scenario.
pub fn analyze_verbal(
    corpus: &Corpus,
    lexicon: &Lexicon,
    lexicon_label: &str,
    expected: &ExpectedDirections,
    opts: &AnalysisOptions,
) -> Result<VerbalSection, AnalysisError> {
    let mut scenarios = Vec::new();
    for scenario in scenarios_present(corpus) {
        let mut docs = Vec::new();
        for p in GROUPS {
            let d = documents(&slice(corpus, scenario, p), opts.unit, p.as_str());
            if d.is_empty() {
                return Err(AnalysisError::MissingGroup { scenario, personality: p });
            }
            docs.extend(d);
        }
        let agg = lexicon::aggregate(&docs, lexicon).map_err(|e| match e {
            LexiconError::EmptyGroup(g) => AnalysisError::MissingGroup {
                scenario,
                personality: if g == "extrovert" {
                    Personality::Extrovert
                } else {
                    Personality::Introvert
                },
            },
            other => other.into(),
        })?;
        let column = |group: &str, f: &dyn Fn(&lexicon::FeatureVector) -> f64| -> Vec<f64> {
            agg.group_docs(group).map(|d| f(&d.features)).collect()
        };
        let compare = |id: &str, name: &str, f: &dyn Fn(&lexicon::FeatureVector) -> f64| {
            FeatureComparison::new(id, name, &column("extrovert", f), &column("introvert", f), opts.variant)
        };
        let word_count = compare("word_count", "Word count", &|f| f.word_count as f64);
        let sentence_count = compare("sentence_count", "Sentence count", &|f| f.sentence_count as f64);
        let features: Vec<FeatureComparison> = lexicon
            .categories()
            .iter()
            .map(|c| compare(&c.id, &c.name, &|f| f.get(&c.id)))
            .collect();

        let tested: Vec<(String, TTestResult)> = features
            .iter()
            .filter_map(|f| f.test.clone().map(|t| (f.feature.clone(), t)))
            .collect();
        let filtered = significance_filter(&tested, opts.alpha, opts.d_min)
            .into_iter()
            .map(|s| {
                let f = features.iter().find(|f| f.feature == s.feature).expect("feature tested");
                let exp = expected.get(&s.feature);
                FilteredFeature {
                    feature: s.feature.clone(),
                    name: f.name.clone(),
                    ext_mean: f.ext_mean,
                    int_mean: f.int_mean,
                    p: s.p,
                    d: s.d,
                    direction: s.direction,
                    stars: stars(s.p).to_string(),
                    expected: exp.map(|e| e.direction),
                    aligned: exp.map(|e| e.direction == s.direction),
                    source: exp.map(|e| e.source.clone()),
                }
            })
            .collect();

        scenarios.push(VerbalScenario {
            scenario,
            ext_documents: agg.groups["extrovert"].documents,
            int_documents: agg.groups["introvert"].documents,
            excluded: agg.excluded.clone(),
            word_count,
            sentence_count,
            features,
            filtered,
        });
    }
    Ok(VerbalSection {
        lexicon: lexicon_label.to_string(),
        scenarios,
    })
}

// ---------------------------------------------------------------------------
// Classification

/// Binary extraversion labeller.
pub trait Classifier: Sync {
    fn descriptor(&self) -> String;
    fn classify(&self, text: &str) -> Result<u8, GatewayError>;
}

/// Which classifier to use; parses from the `--classifier` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifierBinding {
    /// Label 1 when the summed percentage of the listed categories reaches the threshold.
    LexiconBaseline { threshold: f64, categories: Vec<String> },
    /// POST `{"text": ...}` and read `{"extravert": 0|1}`.
    ExternalHttp { endpoint: String },
}

pub const BASELINE_THRESHOLD: f64 = 8.0;

impl Default for ClassifierBinding {
    fn default() -> Self {
        ClassifierBinding::LexiconBaseline {
            threshold: BASELINE_THRESHOLD,
            categories: vec!["posemo".into(), "social".into()],
        }
    }
}

impl FromStr for ClassifierBinding {
    type Err = String;

    /// `baseline`, `baseline:THRESHOLD`, or an `http(s)://` URL.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(ClassifierBinding::ExternalHttp { endpoint: s.to_string() });
        }
        match s.split_once(':') {
            None if s == "baseline" => Ok(ClassifierBinding::default()),
            Some(("baseline", t)) => {
                let threshold: f64 = t
                    .parse()
                    .ok()
                    .filter(|x: &f64| x.is_finite())
                    .ok_or_else(|| format!("bad baseline threshold {t:?}"))?;
                let ClassifierBinding::LexiconBaseline { categories, .. } = Self::default() else {
                    unreachable!()
                };
                Ok(ClassifierBinding::LexiconBaseline { threshold, categories })
            }
            _ => Err(format!(
                "unknown classifier {s:?}; expected baseline, baseline:THRESHOLD or an http(s) URL"
            )),
        }
    }
}

impl ClassifierBinding {
    pub fn build(&self) -> Box<dyn Classifier> {
        match self {
            ClassifierBinding::LexiconBaseline { threshold, categories } => Box::new(LexiconBaseline {
                lexicon: Lexicon::demo(),
                threshold: *threshold,
                categories: categories.clone(),
            }),
            ClassifierBinding::ExternalHttp { endpoint } => Box::new(HttpClassifier::new(endpoint)),
        }
    }
}

/// Offline stand-in classifier built on the demo lexicon.
pub struct LexiconBaseline {
    pub lexicon: Lexicon,
    pub threshold: f64,
    pub categories: Vec<String>,
}

impl Classifier for LexiconBaseline {
    fn descriptor(&self) -> String {
        format!("lexicon-baseline({} >= {})", self.categories.join("+"), self.threshold)
    }

    fn classify(&self, text: &str) -> Result<u8, GatewayError> {
        let rate = match lexicon::score(text, &self.lexicon) {
            Ok(fv) => self.categories.iter().map(|c| fv.get(c)).sum(),
            Err(_) => 0.0,
        };
        Ok(u8::from(rate >= self.threshold))
    }
}

pub struct HttpClassifier {
    endpoint: String,
    #[cfg(feature = "http")]
    poster: crate::llm::JsonPoster,
}

impl HttpClassifier {
    pub fn new(endpoint: &str) -> Self {
        HttpClassifier {
            endpoint: endpoint.to_string(),
            #[cfg(feature = "http")]
            poster: crate::llm::JsonPoster::new(
                std::time::Duration::from_secs(30),
                crate::llm::RetryPolicy::default(),
                4,
            ),
        }
    }
}

impl Classifier for HttpClassifier {
    fn descriptor(&self) -> String {
        format!("http:{}", self.endpoint)
    }

    #[cfg(feature = "http")]
    fn classify(&self, text: &str) -> Result<u8, GatewayError> {
        let body = self.poster.post(&self.endpoint, None, &serde_json::json!({ "text": text }))?;
        match body.get("extravert").and_then(serde_json::Value::as_u64) {
            Some(v @ (0 | 1)) => Ok(v as u8),
            _ => Err(GatewayError::MalformedResponse(format!(
                "expected {{\"extravert\": 0|1}}, got {body}"
            ))),
        }
    }

    #[cfg(not(feature = "http"))]
    fn classify(&self, _text: &str) -> Result<u8, GatewayError> {
        Err(GatewayError::InvalidRequest("built without the `http` feature".into()))
    }
}

/// One classified personality-agent utterance, persisted for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub trial_id: String,
    pub turn_index: usize,
    pub scenario: ScenarioKind,
    pub personality: Personality,
    pub label: Option<u8>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionStatus {
    Ok,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub scenario: Option<ScenarioKind>,
    pub personality: Personality,
    pub labeled: u64,
    pub extravert: u64,
    pub missing: u64,
    /// Fraction of labeled utterances classified as extraverted.
    pub proportion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareComparison {
    /// `None` for the pooled comparison.
    pub scenario: Option<ScenarioKind>,
    /// Rows extrovert/introvert, columns labeled 1/labeled 0.
    pub table: Vec<Vec<u64>>,
    pub yates: Option<ChiSquareResult>,
    pub uncorrected: Option<ChiSquareResult>,
    pub error: Option<String>,
}

impl ChiSquareComparison {
    fn of(scenario: Option<ScenarioKind>, table: Vec<Vec<u64>>) -> Self {
        let yates = chi_square(&table, true);
        let uncorrected = chi_square(&table, false);
        ChiSquareComparison {
            scenario,
            error: yates.as_ref().err().map(ToString::to_string),
            yates: yates.ok(),
            uncorrected: uncorrected.ok(),
            table,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSection {
    pub status: SectionStatus,
    pub reason: Option<String>,
    pub classifier: String,
    pub groups: Vec<LabelCounts>,
    pub per_scenario: Vec<ChiSquareComparison>,
    pub pooled: Option<ChiSquareComparison>,
    /// (scenario x personality) rows by label columns, no continuity correction.
    pub interaction: Option<ChiSquareResult>,
    pub interaction_error: Option<String>,
}

pub struct ClassificationOutcome {
    pub section: ClassificationSection,
    pub labels: Vec<LabelRecord>,
}

fn is_unreachable(e: &GatewayError) -> bool {
    matches!(e, GatewayError::Transport { status: None, .. } | GatewayError::InvalidRequest(_))
}

/// Labels every personality-agent utterance and compares label rates.
///
/// Per-utterance failures are recorded as missing. If the classifier is
/// unreachable on the first call the section is marked unavailable.
pub fn classify_extraversion(corpus: &Corpus, classifier: &dyn Classifier) -> ClassificationOutcome {
    let mut labels = Vec::new();
    for t in &corpus.trials {
        for u in t.utterances.iter().filter(|u| u.speaker == Speaker::Personality) {
            labels.push(LabelRecord {
                id: format!("{}#{}", t.entry.trial_id, u.turn_index),
                trial_id: t.entry.trial_id.clone(),
                turn_index: u.turn_index,
                scenario: t.entry.scenario,
                personality: t.entry.personality,
                label: None,
                error: None,
            });
        }
    }
    let texts: Vec<&str> = corpus
        .trials
        .iter()
        .flat_map(|t| t.utterances.iter().filter(|u| u.speaker == Speaker::Personality))
        .map(|u| u.text.as_str())
        .collect();

    let mut unavailable = None;
    for (i, (rec, text)) in labels.iter_mut().zip(&texts).enumerate() {
        if unavailable.is_some() {
            rec.error = Some("classifier unavailable".into());
            continue;
        }
        match classifier.classify(text) {
            Ok(l) => rec.label = Some(l),
            Err(e) => {
                if i == 0 && is_unreachable(&e) {
                    unavailable = Some(e.to_string());
                }
                rec.error = Some(e.to_string());
            }
        }
    }
    let section = summarize_labels(&labels, classifier.descriptor(), unavailable);
    ClassificationOutcome { section, labels }
}

/// Builds the classification section from persisted labels alone.
pub fn summarize_labels(
    labels: &[LabelRecord],
    classifier: String,
    unavailable: Option<String>,
) -> ClassificationSection {
    if let Some(reason) = unavailable {
        return ClassificationSection {
            status: SectionStatus::Unavailable,
            reason: Some(reason),
            classifier,
            groups: Vec::new(),
            per_scenario: Vec::new(),
            pooled: None,
            interaction: None,
            interaction_error: None,
        };
    }
    let count = |scenario: Option<ScenarioKind>, personality: Personality| {
        let rows = labels
            .iter()
            .filter(|l| l.personality == personality && scenario.is_none_or(|s| l.scenario == s));
        let mut c = LabelCounts {
            scenario,
            personality,
            labeled: 0,
            extravert: 0,
            missing: 0,
            proportion: None,
        };
        for l in rows {
            match l.label {
                Some(v) => {
                    c.labeled += 1;
                    c.extravert += u64::from(v);
                }
                None => c.missing += 1,
            }
        }
        c.proportion = (c.labeled > 0).then(|| c.extravert as f64 / c.labeled as f64);
        c
    };
    let table_of = |scenario: Option<ScenarioKind>| -> Vec<Vec<u64>> {
        GROUPS
            .iter()
            .map(|&p| {
                let c = count(scenario, p);
                vec![c.extravert, c.labeled - c.extravert]
            })
            .collect()
    };

    let mut scenarios: Vec<ScenarioKind> = labels.iter().map(|l| l.scenario).collect();
    scenarios.sort();
    scenarios.dedup();

    let mut groups = Vec::new();
    let mut per_scenario = Vec::new();
    let mut interaction_rows = Vec::new();
    for &s in &scenarios {
        for p in GROUPS {
            groups.push(count(Some(s), p));
        }
        let table = table_of(Some(s));
        interaction_rows.extend(table.iter().cloned());
        per_scenario.push(ChiSquareComparison::of(Some(s), table));
    }
    let pooled = (scenarios.len() > 1).then(|| {
        for p in GROUPS {
            groups.push(count(None, p));
        }
        ChiSquareComparison::of(None, table_of(None))
    });
    let (interaction, interaction_error) = if scenarios.len() > 1 {
        match chi_square(&interaction_rows, false) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    ClassificationSection {
        status: SectionStatus::Ok,
        reason: None,
        classifier,
        groups,
        per_scenario,
        pooled,
        interaction,
        interaction_error,
    }
}

// ---------------------------------------------------------------------------
// Nonverbal

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionFrequency {
    pub modality: Modality,
    pub action: String,
    pub polarity: Polarity,
    /// Utterances containing the action.
    pub ext_count: u64,
    pub int_count: u64,
    pub ext_frequency: f64,
    pub int_frequency: f64,
}

/// Side-by-side view of one extrovert-/introvert-leaning action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairContrast {
    pub extrovert_action: String,
    pub introvert_action: String,
    pub ext_on_ext_action: f64,
    pub ext_on_int_action: f64,
    pub int_on_ext_action: f64,
    pub int_on_int_action: f64,
    /// (EXT - INT) on the extrovert-leaning action minus (EXT - INT) on the
    /// introvert-leaning one. Positive when each agent favors its own side.
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonverbalScenario {
    pub scenario: ScenarioKind,
    pub ext_units: u64,
    pub int_units: u64,
    /// All schema actions in schema order, zeros included.
    pub actions: Vec<ActionFrequency>,
    pub contrasts: Vec<PairContrast>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonverbalSection {
    pub unit: Unit,
    pub scenarios: Vec<NonverbalScenario>,
}

/// Per-action selection frequency for one group.
///
/// Utterance unit: share of utterances containing the action. Trial unit:
/// mean over trials of each trial's share.
fn frequencies(slice: &Slice<'_>, unit: Unit) -> (u64, BTreeMap<&'static str, (u64, f64)>) {
    let schema = load_schema();
    let per_trial: Vec<Vec<&crate::schema::AnnotatedUtterance>> = slice
        .trials
        .iter()
        .map(|t| t.utterances.iter().filter(|u| u.speaker == Speaker::Personality).collect())
        .collect();
    let utterances: Vec<_> = per_trial.iter().flatten().copied().collect();
    let units = match unit {
        Unit::Utterance => utterances.len() as u64,
        Unit::Trial => per_trial.iter().filter(|t| !t.is_empty()).count() as u64,
    };
    let mut out = BTreeMap::new();
    for a in schema.actions() {
        let count = utterances.iter().filter(|u| u.actions.contains(a.name)).count() as u64;
        let freq = match unit {
            Unit::Utterance if units > 0 => count as f64 / units as f64,
            Unit::Trial if units > 0 => {
                per_trial
                    .iter()
                    .filter(|t| !t.is_empty())
                    .map(|t| {
                        t.iter().filter(|u| u.actions.contains(a.name)).count() as f64
                            / t.len() as f64
                    })
                    .sum::<f64>()
                    / units as f64
            }
            _ => 0.0,
        };
        out.insert(a.name, (count, freq));
    }
    (units, out)
}

pub fn analyze_nonverbal(corpus: &Corpus, unit: Unit) -> Result<NonverbalSection, AnalysisError> {
    let schema = load_schema();
    let mut scenarios = Vec::new();
    for scenario in scenarios_present(corpus) {
        let (ext_units, ext) = frequencies(&slice(corpus, scenario, Personality::Extrovert), unit);
        let (int_units, int) = frequencies(&slice(corpus, scenario, Personality::Introvert), unit);
        for (units, p) in [(ext_units, Personality::Extrovert), (int_units, Personality::Introvert)] {
            if units == 0 {
                return Err(AnalysisError::MissingGroup { scenario, personality: p });
            }
        }
        let actions = schema
            .actions()
            .iter()
            .map(|a| ActionFrequency {
                modality: a.modality,
                action: a.name.to_string(),
                polarity: a.polarity,
                ext_count: ext[a.name].0,
                int_count: int[a.name].0,
                ext_frequency: ext[a.name].1,
                int_frequency: int[a.name].1,
            })
            .collect();
        let contrasts = schema
            .polarity_pairs()
            .into_iter()
            .map(|(e, i)| {
                let c = PairContrast {
                    extrovert_action: e.to_string(),
                    introvert_action: i.to_string(),
                    ext_on_ext_action: ext[e].1,
                    ext_on_int_action: ext[i].1,
                    int_on_ext_action: int[e].1,
                    int_on_int_action: int[i].1,
                    contrast: 0.0,
                };
                PairContrast {
                    contrast: (c.ext_on_ext_action - c.int_on_ext_action)
                        - (c.ext_on_int_action - c.int_on_int_action),
                    ..c
                }
            })
            .collect();
        scenarios.push(NonverbalScenario {
            scenario,
            ext_units,
            int_units,
            actions,
            contrasts,
        });
    }
    Ok(NonverbalSection { unit, scenarios })
}

// ---------------------------------------------------------------------------
// Report assembly

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub turn_definition: String,
    pub trials_complete: usize,
    pub trials_failed: Vec<String>,
    pub personality_utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub run: RunSummary,
    pub options: AnalysisOptions,
    pub verbal: Option<VerbalSection>,
    pub classification: Option<ClassificationSection>,
    pub nonverbal: Option<NonverbalSection>,
}

pub struct AnalysisInputs<'a> {
    pub lexicon: &'a Lexicon,
    pub lexicon_label: &'a str,
    pub expected: &'a ExpectedDirections,
    pub classifier: &'a dyn Classifier,
}

/// Runs the requested sections. Returns the report and, when classification
/// ran, the raw labels.
pub fn analyze(
    corpus: &Corpus,
    inputs: &AnalysisInputs<'_>,
    opts: &AnalysisOptions,
) -> Result<(ComparisonReport, Option<Vec<LabelRecord>>), AnalysisError> {
    let verbal = opts
        .verbal
        .then(|| analyze_verbal(corpus, inputs.lexicon, inputs.lexicon_label, inputs.expected, opts))
        .transpose()?;
    let nonverbal = opts.nonverbal.then(|| analyze_nonverbal(corpus, opts.unit)).transpose()?;
    let (classification, labels) = if opts.classify {
        let out = classify_extraversion(corpus, inputs.classifier);
        (Some(out.section), Some(out.labels))
    } else {
        (None, None)
    };
    let run = RunSummary {
        config_hash: corpus.manifest.config_hash.clone(),
        turn_definition: corpus.manifest.config.turn_definition.clone(),
        trials_complete: corpus.trials.len(),
        trials_failed: corpus
            .manifest
            .trials
            .iter()
            .filter(|e| e.status != crate::sim::TrialStatus::Complete)
            .map(|e| e.trial_id.clone())
            .collect(),
        personality_utterances: corpus
            .trials
            .iter()
            .flat_map(|t| &t.utterances)
            .filter(|u| u.speaker == Speaker::Personality)
            .count(),
    };
    Ok((
        ComparisonReport {
            schema_version: REPORT_SCHEMA_VERSION,
            run,
            options: opts.clone(),
            verbal,
            classification,
            nonverbal,
        },
        labels,
    ))
}
