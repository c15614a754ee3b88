//! Dictionary-driven word-category scoring.
//!
//! A lexicon maps literal words and `stem*` prefix patterns to one or more
//! categories. Scoring a document reports, per category, the percentage of
//! its tokens that match, alongside word and sentence counts.
//!
//! # Lexicon file format
//!
//! ```text
//! # comment
//! %
//! posemo<TAB>Positive Emotions
//! feel<TAB>Feel
//! %
//! happy<TAB>posemo
//! feel*<TAB>feel
//! ```
//!
//! The block between the two `%` lines declares category ids and display
//! names. Each following line is a lowercase pattern, a tab, and a
//! comma-separated list of category ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexiconError {
    #[error("lexicon line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("document has no words")]
    EmptyDocument,
    #[error("group {0} has no scoreable documents")]
    EmptyGroup(String),
    #[error("reading lexicon {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: String,
    pub name: String,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    categories: Vec<Category>,
    literals: HashMap<String, BTreeSet<usize>>,
    stems: HashMap<String, BTreeSet<usize>>,
}

const DEMO_LEXICON: &str = include_str!("../data/demo_lexicon.dic");

impl Lexicon {
    /// The small openly-licensed demo lexicon bundled with the crate.
    pub fn demo() -> Lexicon {
        Lexicon::parse(DEMO_LEXICON).expect("bundled demo lexicon parses")
    }

    pub fn demo_source() -> &'static str {
        DEMO_LEXICON
    }

    pub fn from_file(path: &Path) -> Result<Lexicon, LexiconError> {
        let src = std::fs::read_to_string(path).map_err(|e| LexiconError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Lexicon::parse(&src)
    }

    pub fn parse(src: &str) -> Result<Lexicon, LexiconError> {
        let err = |line: usize, message: String| LexiconError::Syntax { line, message };
        let mut categories: Vec<Category> = Vec::new();
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut lex = Lexicon {
            categories: Vec::new(),
            literals: HashMap::new(),
            stems: HashMap::new(),
        };
        // 0 = before header, 1 = in header, 2 = patterns
        let mut section = 0;
        for (i, line) in src.lines().enumerate() {
            let lineno = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if trimmed == "%" {
                section += 1;
                if section > 2 {
                    return Err(err(lineno, "unexpected third '%' delimiter".into()));
                }
                continue;
            }
            match section {
                0 => return Err(err(lineno, "expected '%' to open the category header".into())),
                1 => {
                    let (id, name) = split_field(trimmed)
                        .ok_or_else(|| err(lineno, "expected `id<TAB>name`".into()))?;
                    if ids.contains_key(id) {
                        return Err(err(lineno, format!("duplicate category id {id:?}")));
                    }
                    ids.insert(id.to_string(), categories.len());
                    categories.push(Category { id: id.into(), name: name.into() });
                }
                _ => {
                    let (pattern, cats) = split_field(trimmed)
                        .ok_or_else(|| err(lineno, "expected `pattern<TAB>categories`".into()))?;
                    if pattern != pattern.to_lowercase() {
                        return Err(err(lineno, format!("pattern {pattern:?} must be lowercase")));
                    }
                    let (key, is_stem) = match pattern.strip_suffix('*') {
                        Some(stem) => (stem, true),
                        None => (pattern, false),
                    };
                    if key.is_empty() {
                        return Err(err(lineno, "wildcard stem is empty".into()));
                    }
                    if key.contains('*') || key.chars().any(char::is_whitespace) {
                        return Err(err(lineno, format!("invalid pattern {pattern:?}")));
                    }
                    let table = if is_stem { &mut lex.stems } else { &mut lex.literals };
                    let entry = table.entry(key.to_string()).or_default();
                    for cat in cats.split(',').map(str::trim).filter(|c| !c.is_empty()) {
                        let idx = *ids
                            .get(cat)
                            .ok_or_else(|| err(lineno, format!("unknown category {cat:?}")))?;
                        if !entry.insert(idx) {
                            return Err(err(
                                lineno,
                                format!("duplicate pattern {pattern:?} in category {cat:?}"),
                            ));
                        }
                    }
                }
            }
        }
        if section < 2 {
            return Err(err(src.lines().count().max(1), "missing category header".into()));
        }
        lex.categories = categories;
        Ok(lex)
    }

    /// Builds a lexicon from `(category id, patterns)` pairs; display name = id.
    pub fn from_patterns(spec: &[(&str, &[&str])]) -> Result<Lexicon, LexiconError> {
        let mut src = String::from("%\n");
        for (id, _) in spec {
            src.push_str(&format!("{id}\t{id}\n"));
        }
        src.push_str("%\n");
        for (id, patterns) in spec {
            for p in *patterns {
                src.push_str(&format!("{p}\t{id}\n"));
            }
        }
        Lexicon::parse(&src)
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category(&self, id: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    /// Category indices a lowercase token belongs to, via literal or any matching stem.
    pub fn match_token(&self, token: &str) -> BTreeSet<usize> {
        let mut out = self.literals.get(token).cloned().unwrap_or_default();
        for (i, _) in token.char_indices().skip(1).chain([(token.len(), ' ')]) {
            if let Some(cats) = self.stems.get(&token[..i]) {
                out.extend(cats);
            }
        }
        out
    }

    /// Copy of this lexicon with one category removed.
    pub fn without_category(&self, id: &str) -> Lexicon {
        let Some(drop) = self.categories.iter().position(|c| c.id == id) else {
            return self.clone();
        };
        let remap = |set: &BTreeSet<usize>| -> BTreeSet<usize> {
            set.iter()
                .filter(|&&c| c != drop)
                .map(|&c| if c > drop { c - 1 } else { c })
                .collect()
        };
        let filter = |table: &HashMap<String, BTreeSet<usize>>| {
            table
                .iter()
                .map(|(k, v)| (k.clone(), remap(v)))
                .filter(|(_, v)| !v.is_empty())
                .collect()
        };
        let mut categories = self.categories.clone();
        categories.remove(drop);
        Lexicon {
            categories,
            literals: filter(&self.literals),
            stems: filter(&self.stems),
        }
    }
}

fn split_field(line: &str) -> Option<(&str, &str)> {
    let (a, b) = line.split_once('\t')?;
    let (a, b) = (a.trim(), b.trim());
    (!a.is_empty() && !b.is_empty()).then_some((a, b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub tokens: Vec<String>,
    pub sentence_count: usize,
}

/// Splits text into lowercase word tokens (runs of letters and apostrophes)
/// and counts sentences as runs of `.`, `?` or `!` (at least 1 for non-blank text).
///
/// Hyphens and digits separate tokens. Apostrophes at either end of a run
/// are trimmed, and runs with no letters are dropped.
pub fn tokenize(text: &str) -> Tokenized {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut flush = |current: &mut String| {
        let t = current.trim_matches('\'');
        if t.chars().any(char::is_alphabetic) {
            tokens.push(t.to_string());
        }
        current.clear();
    };
    let mut sentences = 0;
    let mut in_terminal_run = false;
    for c in text.chars() {
        let c = if c == '\u{2019}' { '\'' } else { c };
        if c.is_alphabetic() || c == '\'' {
            current.extend(c.to_lowercase());
        } else {
            flush(&mut current);
        }
        let terminal = matches!(c, '.' | '?' | '!');
        if terminal && !in_terminal_run {
            sentences += 1;
        }
        in_terminal_run = terminal;
    }
    flush(&mut current);
    if sentences == 0 && !text.trim().is_empty() {
        sentences = 1;
    }
    Tokenized {
        tokens,
        sentence_count: sentences,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub word_count: usize,
    pub sentence_count: usize,
    /// Category id -> 100 * matching tokens / word count.
    pub percentages: BTreeMap<String, f64>,
}

impl FeatureVector {
    pub fn get(&self, id: &str) -> f64 {
        self.percentages.get(id).copied().unwrap_or(0.0)
    }
}

pub fn score(text: &str, lexicon: &Lexicon) -> Result<FeatureVector, LexiconError> {
    let Tokenized {
        tokens,
        sentence_count,
    } = tokenize(text);
    if tokens.is_empty() {
        return Err(LexiconError::EmptyDocument);
    }
    let mut hits = vec![0usize; lexicon.categories.len()];
    for tok in &tokens {
        for c in lexicon.match_token(tok) {
            hits[c] += 1;
        }
    }
    let n = tokens.len() as f64;
    Ok(FeatureVector {
        word_count: tokens.len(),
        sentence_count,
        percentages: lexicon
            .categories
            .iter()
            .zip(hits)
            .map(|(c, h)| (c.id.clone(), 100.0 * h as f64 / n))
            .collect(),
    })
}

/// A unit of text to score, tagged with its group label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub group: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub id: String,
    pub group: String,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub documents: usize,
    pub word_count: f64,
    pub sentence_count: f64,
    pub percentages: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub documents: Vec<ScoredDocument>,
    /// Ids of documents with no words, left out of every mean.
    pub excluded: Vec<String>,
    pub groups: BTreeMap<String, GroupMeans>,
}

impl Aggregate {
    pub fn group_docs<'a>(&'a self, group: &'a str) -> impl Iterator<Item = &'a ScoredDocument> {
        self.documents.iter().filter(move |d| d.group == group)
    }
}

/// Scores every document and takes unweighted per-group means.
pub fn aggregate(docs: &[Document], lexicon: &Lexicon) -> Result<Aggregate, LexiconError> {
    let mut documents = Vec::new();
    let mut excluded = Vec::new();
    let mut group_names = BTreeSet::new();
    for d in docs {
        group_names.insert(d.group.clone());
        match score(&d.text, lexicon) {
            Ok(features) => documents.push(ScoredDocument {
                id: d.id.clone(),
                group: d.group.clone(),
                features,
            }),
            Err(LexiconError::EmptyDocument) => excluded.push(d.id.clone()),
            Err(e) => return Err(e),
        }
    }
    let mut groups = BTreeMap::new();
    for g in group_names {
        let members: Vec<&ScoredDocument> = documents.iter().filter(|d| d.group == g).collect();
        if members.is_empty() {
            return Err(LexiconError::EmptyGroup(g));
        }
        let n = members.len() as f64;
        let mean = |f: &dyn Fn(&FeatureVector) -> f64| {
            members.iter().map(|d| f(&d.features)).sum::<f64>() / n
        };
        groups.insert(
            g,
            GroupMeans {
                documents: members.len(),
                word_count: mean(&|f| f.word_count as f64),
                sentence_count: mean(&|f| f.sentence_count as f64),
                percentages: lexicon
                    .categories
                    .iter()
                    .map(|c| (c.id.clone(), mean(&|f| f.get(&c.id))))
                    .collect(),
            },
        );
    }
    Ok(Aggregate {
        documents,
        excluded,
        groups,
    })
}
