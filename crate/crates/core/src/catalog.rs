//! Natural-language descriptions of the animation clip behind each action,
//! and the offline step that asks an LLM to write them.
//!
//! Catalog files are line-delimited JSON. The first line is a header
//! `{"schema_version":1,"kind":"description_catalog","k":3,"complete":true}`;
//! every following line is `{"action":"Nod","description":"..."}`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{self, ChatBackend, ChatMessage, ChatRequest, GatewayError};
use crate::schema::{load_schema, ActionSchema};

pub const CATALOG_SCHEMA_VERSION: u32 = 1;
const CATALOG_KIND: &str = "description_catalog";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown action {0:?} in catalog")]
    UnknownAction(String),
    #[error("clip manifest does not cover: {}", .0.join(", "))]
    ManifestIncomplete(Vec<String>),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("generation stopped after {done} of {total} actions; partial catalog saved to {path}: {source}")]
    PartialCatalog {
        done: usize,
        total: usize,
        path: String,
        #[source]
        source: GatewayError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionCatalog {
    entries: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogHeader {
    schema_version: u32,
    kind: String,
    k: usize,
    complete: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CatalogRecord {
    action: String,
    description: String,
}

const BUNDLED_CATALOG: &str = include_str!("../data/descriptions.jsonl");

impl DescriptionCatalog {
    /// Hand-written descriptions shipped with the crate.
    pub fn bundled() -> Self {
        DescriptionCatalog::parse(BUNDLED_CATALOG).expect("bundled catalog parses")
    }

    pub fn parse(src: &str) -> Result<Self, CatalogError> {
        let schema = load_schema();
        let mut cat = DescriptionCatalog::default();
        let mut lines = src
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let perr = |line: usize, message: String| CatalogError::Parse { line: line + 1, message };
        let (hl, header) = lines.next().ok_or_else(|| perr(0, "missing header".into()))?;
        let header: CatalogHeader =
            serde_json::from_str(header).map_err(|e| perr(hl, e.to_string()))?;
        if header.kind != CATALOG_KIND || header.schema_version != CATALOG_SCHEMA_VERSION {
            return Err(perr(hl, format!("unsupported catalog header {header:?}")));
        }
        for (i, line) in lines {
            let rec: CatalogRecord = serde_json::from_str(line).map_err(|e| perr(i, e.to_string()))?;
            let action = schema
                .get(&rec.action)
                .ok_or_else(|| CatalogError::UnknownAction(rec.action.clone()))?;
            if rec.description.trim().is_empty() {
                return Err(perr(i, format!("empty description for {}", action.name)));
            }
            cat.push(action.name, rec.description.trim());
        }
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let src = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        DescriptionCatalog::parse(&src)
    }

    /// Header plus records, actions in schema order.
    pub fn to_jsonl(&self, k: usize, complete: bool) -> String {
        let header = CatalogHeader {
            schema_version: CATALOG_SCHEMA_VERSION,
            kind: CATALOG_KIND.into(),
            k,
            complete,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for a in load_schema().actions() {
            for d in self.descriptions(a.name) {
                let rec = CatalogRecord { action: a.name.into(), description: d.clone() };
                out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                out.push('\n');
            }
        }
        out
    }

    /// Writes via a temporary file and rename so readers never see a torn file.
    pub fn save(&self, path: &Path, k: usize, complete: bool) -> Result<(), CatalogError> {
        write_atomic(path, self.to_jsonl(k, complete).as_bytes()).map_err(|source| {
            CatalogError::Io {
                path: path.display().to_string(),
                source,
            }
        })
    }

    pub fn push(&mut self, action: &str, description: &str) {
        self.entries
            .entry(action.to_string())
            .or_default()
            .push(description.to_string());
    }

    pub fn remove(&mut self, action: &str) {
        self.entries.remove(action);
    }

    pub fn descriptions(&self, action: &str) -> &[String] {
        self.entries.get(action).map_or(&[], Vec::as_slice)
    }

    /// Schema actions with no description, in schema order.
    pub fn missing(&self, schema: &ActionSchema) -> Vec<String> {
        schema
            .actions()
            .iter()
            .filter(|a| self.descriptions(a.name).is_empty())
            .map(|a| a.name.to_string())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// True when every schema action has at least `k` descriptions.
    pub fn is_complete(&self, schema: &ActionSchema, k: usize) -> bool {
        schema.actions().iter().all(|a| self.descriptions(a.name).len() >= k)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

/// One animation clip backing an action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub action: String,
    pub clip: String,
    #[serde(default)]
    pub notes: String,
}

const BUNDLED_CLIPS: &str = include_str!("../data/clips.json");

pub fn bundled_clip_manifest() -> Vec<ClipSpec> {
    serde_json::from_str(BUNDLED_CLIPS).expect("bundled clip manifest parses")
}

pub fn load_clip_manifest(path: &Path) -> Result<Vec<ClipSpec>, CatalogError> {
    let src = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&src).map_err(|e| CatalogError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct GenerationOptions {
    pub k: usize,
    pub force: bool,
    pub model: String,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            k: 3,
            force: false,
            model: llm::DEFAULT_MODEL.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationSummary {
    pub catalog: DescriptionCatalog,
    pub backend_calls: usize,
}

const DESCRIBER_PROMPT: &str = "You write short, concrete descriptions of character animation \
clips for a virtual human. Describe only the visible or audible movement: which body parts move, \
in what direction, how large and how fast. Answer with a single sentence and nothing else.";

fn describe_request(clip: &ClipSpec, index: usize, k: usize, model: &str) -> ChatRequest {
    let mut req = ChatRequest::new(DESCRIBER_PROMPT);
    req.model = model.to_string();
    let mut user = format!("Action label: {}\nClip: {}\n", clip.action, clip.clip);
    if !clip.notes.trim().is_empty() {
        user.push_str(&format!("Notes: {}\n", clip.notes.trim()));
    }
    user.push_str(&format!("Write description {} of {k}.", index + 1));
    req.messages.push(ChatMessage::user(user));
    req
}

fn clean_description(s: &str) -> String {
    s.trim().trim_matches(|c| c == '"' || c == '\'').trim().to_string()
}

/// Produces `k` descriptions per action and persists the catalog at `path`.
///
/// An existing complete catalog is returned untouched unless `force` is set.
/// A partial catalog is extended action by action, saving after each, so an
/// interrupted run resumes where it stopped.
pub fn generate_descriptions(
    manifest: &[ClipSpec],
    backend: &dyn ChatBackend,
    path: &Path,
    opts: &GenerationOptions,
) -> Result<GenerationSummary, CatalogError> {
    let schema = load_schema();
    if opts.k == 0 {
        return Err(CatalogError::InvalidK);
    }
    let mut clips: BTreeMap<usize, &ClipSpec> = BTreeMap::new();
    for c in manifest {
        let p = schema
            .position(&c.action)
            .ok_or_else(|| CatalogError::UnknownAction(c.action.clone()))?;
        clips.entry(p).or_insert(c);
    }
    let missing: Vec<String> = schema
        .actions()
        .iter()
        .enumerate()
        .filter(|(i, _)| !clips.contains_key(i))
        .map(|(_, a)| a.name.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CatalogError::ManifestIncomplete(missing));
    }

    let mut catalog = if path.exists() && !opts.force {
        DescriptionCatalog::load(path)?
    } else {
        DescriptionCatalog::default()
    };
    if catalog.is_complete(schema, opts.k) {
        return Ok(GenerationSummary { catalog, backend_calls: 0 });
    }

    let mut calls = 0;
    for (done, (pos, clip)) in clips.iter().enumerate() {
        let name = schema.actions()[*pos].name;
        let have = catalog.descriptions(name).len();
        if have >= opts.k {
            continue;
        }
        let canonical = ClipSpec { action: name.to_string(), ..(*clip).clone() };
        for i in have..opts.k {
            calls += 1;
            let req = describe_request(&canonical, i, opts.k, &opts.model);
            match llm::complete(&req, backend) {
                Ok(text) if !clean_description(&text).is_empty() => {
                    catalog.push(name, &clean_description(&text));
                }
                Ok(_) => {
                    return Err(partial(&catalog, path, opts.k, done, GatewayError::MalformedResponse(
                        format!("empty description for {name}"),
                    )))
                }
                Err(e) => return Err(partial(&catalog, path, opts.k, done, e)),
            }
        }
        catalog.save(path, opts.k, false)?;
    }
    catalog.save(path, opts.k, true)?;
    Ok(GenerationSummary { catalog, backend_calls: calls })
}

fn partial(
    catalog: &DescriptionCatalog,
    path: &Path,
    k: usize,
    done: usize,
    source: GatewayError,
) -> CatalogError {
    if let Err(e) = catalog.save(path, k, false) {
        return e;
    }
    CatalogError::PartialCatalog {
        done,
        total: load_schema().len(),
        path: path.display().to_string(),
        source,
    }
}
