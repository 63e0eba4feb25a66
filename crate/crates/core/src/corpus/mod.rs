//! Reference pages, theorem/proof examples and splits.
//!
//! The interchange format is one JSON document:
//!
//! ```json
//! {
//!   "references": [{"id": 1, "kind": "definition", "title": "Definition:Even Integer", "contents": ["..."]}],
//!   "examples":   [{"theorem_id": 3, "proof": "raw proof text"}],
//!   "splits":     {"train": [3], "valid": [], "test": []}
//! }
//! ```
//!
//! or JSON-lines where every line is `{"reference": {...}}`,
//! `{"example": {...}}` or `{"splits": {...}}`. An optional
//! `reference_splits` object (same shape as `splits`, holding reference ids)
//! pins which pages count as training references; without it every page that
//! is not a valid/test theorem is a training reference.

mod mention;
mod normalize;
mod segment;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use mention::{
    normalize_title, parse_mentions, parse_mentions_with_warnings, MentionKind, MentionWarning,
    ReferenceMention,
};
pub use normalize::normalize;
pub use segment::{segment_proof, ProofDocument, ProofStep, STEP_SEPARATOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefKind {
    Theorem,
    Definition,
    Other,
}

impl RefKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RefKind::Theorem => "theorem",
            RefKind::Definition => "definition",
            RefKind::Other => "other",
        }
    }
}

impl fmt::Display for RefKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RefKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "theorem" => Ok(RefKind::Theorem),
            "definition" => Ok(RefKind::Definition),
            "other" => Ok(RefKind::Other),
            other => Err(format!("unknown kind {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub id: u64,
    pub kind: RefKind,
    pub title: String,
    pub content: Vec<String>,
    pub mentions: Vec<ReferenceMention>,
}

impl Reference {
    pub fn new(id: u64, kind: RefKind, title: impl Into<String>, content: Vec<String>) -> Self {
        let mentions = parse_mentions(&content.join("\n"));
        Reference {
            id,
            kind,
            title: title.into(),
            content,
            mentions,
        }
    }

    pub fn canonical_title(&self) -> String {
        normalize_title(&self.title)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub valid: Vec<u64>,
    pub test: Vec<u64>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[u64] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub theorem_id: u64,
    pub proof: ProofDocument,
}

/// A gold proof mentions a title with no corpus page.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingMention {
    pub theorem_id: u64,
    pub split: Option<Split>,
    pub title: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Json,
    JsonLines,
}

impl CorpusFormat {
    /// `.jsonl` / `.ndjson` are JSON-lines, anything else a single document.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => CorpusFormat::JsonLines,
            _ => CorpusFormat::Json,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON{}: {source}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Json {
        line: Option<usize>,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed record {record}: field `{field}`: {message}")]
    Malformed {
        record: String,
        field: String,
        message: String,
    },
    #[error("duplicate title {title:?}: pages {first} ({first_title:?}) and {second} ({second_title:?})")]
    DuplicateTitle {
        title: String,
        first: u64,
        first_title: String,
        second: u64,
        second_title: String,
    },
    #[error("duplicate reference id {0}")]
    DuplicateId(u64),
    #[error("theorem {id} appears in both the {a} and {b} splits")]
    OverlappingSplits { id: u64, a: &'static str, b: &'static str },
}

/// An immutable, validated corpus.
#[derive(Clone, Debug)]
pub struct Corpus {
    references: BTreeMap<String, Reference>,
    by_id: HashMap<u64, String>,
    examples: Vec<Example>,
    splits: Splits,
    reference_splits: Option<Splits>,
    diagnostics: Vec<DanglingMention>,
}

fn malformed(record: &str, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        record: record.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn as_object<'a>(v: &'a Value, record: &str) -> Result<&'a Map<String, Value>, CorpusError> {
    v.as_object()
        .ok_or_else(|| malformed(record, "<record>", "expected an object"))
}

fn get_u64(obj: &Map<String, Value>, record: &str, field: &str) -> Result<u64, CorpusError> {
    obj.get(field)
        .ok_or_else(|| malformed(record, field, "missing"))?
        .as_u64()
        .ok_or_else(|| malformed(record, field, "expected a non-negative integer"))
}

fn get_str<'a>(obj: &'a Map<String, Value>, record: &str, field: &str) -> Result<&'a str, CorpusError> {
    obj.get(field)
        .ok_or_else(|| malformed(record, field, "missing"))?
        .as_str()
        .ok_or_else(|| malformed(record, field, "expected a string"))
}

fn get_id_list(obj: &Map<String, Value>, record: &str, field: &str) -> Result<Vec<u64>, CorpusError> {
    match obj.get(field) {
        None => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_u64().ok_or_else(|| malformed(record, field, "expected integer ids")))
            .collect(),
        Some(_) => Err(malformed(record, field, "expected an array")),
    }
}

fn parse_reference(v: &Value, index: usize) -> Result<Reference, CorpusError> {
    let fallback = format!("references[{index}]");
    let obj = as_object(v, &fallback)?;
    let record = obj
        .get("id")
        .and_then(Value::as_u64)
        .map(|id| format!("reference {id}"))
        .unwrap_or(fallback);
    let id = get_u64(obj, &record, "id")?;
    let kind = get_str(obj, &record, "kind")?
        .parse::<RefKind>()
        .map_err(|e| malformed(&record, "kind", e))?;
    let title = get_str(obj, &record, "title")?;
    if normalize_title(title).is_empty() {
        return Err(malformed(&record, "title", "empty title"));
    }
    let contents = match obj.get("contents") {
        None => Vec::new(),
        Some(Value::Array(lines)) => lines
            .iter()
            .map(|l| {
                l.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| malformed(&record, "contents", "expected a list of strings"))
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(malformed(&record, "contents", "expected a list of strings")),
    };
    Ok(Reference::new(id, kind, title, contents))
}

fn parse_example(v: &Value, index: usize) -> Result<(u64, String), CorpusError> {
    let fallback = format!("examples[{index}]");
    let obj = as_object(v, &fallback)?;
    let record = obj
        .get("theorem_id")
        .and_then(Value::as_u64)
        .map(|id| format!("example for theorem {id}"))
        .unwrap_or(fallback);
    let theorem_id = get_u64(obj, &record, "theorem_id")?;
    let proof = get_str(obj, &record, "proof")?;
    Ok((theorem_id, proof.to_string()))
}

fn parse_splits(v: &Value, record: &str) -> Result<Splits, CorpusError> {
    let obj = as_object(v, record)?;
    Ok(Splits {
        train: get_id_list(obj, record, "train")?,
        valid: get_id_list(obj, record, "valid")?,
        test: get_id_list(obj, record, "test")?,
    })
}

#[derive(Default)]
struct RawCorpus {
    references: Vec<Reference>,
    examples: Vec<(u64, String)>,
    splits: Splits,
    reference_splits: Option<Splits>,
}

fn parse_document(text: &str) -> Result<RawCorpus, CorpusError> {
    let doc: Value = serde_json::from_str(text).map_err(|source| CorpusError::Json { line: None, source })?;
    let obj = as_object(&doc, "<document>")?;
    let mut raw = RawCorpus::default();
    match obj.get("references") {
        Some(Value::Array(refs)) => {
            for (i, r) in refs.iter().enumerate() {
                raw.references.push(parse_reference(r, i)?);
            }
        }
        Some(_) => return Err(malformed("<document>", "references", "expected an array")),
        None => return Err(malformed("<document>", "references", "missing")),
    }
    match obj.get("examples") {
        Some(Value::Array(exs)) => {
            for (i, e) in exs.iter().enumerate() {
                raw.examples.push(parse_example(e, i)?);
            }
        }
        Some(_) => return Err(malformed("<document>", "examples", "expected an array")),
        None => return Err(malformed("<document>", "examples", "missing")),
    }
    if let Some(s) = obj.get("splits") {
        raw.splits = parse_splits(s, "splits")?;
    }
    if let Some(s) = obj.get("reference_splits") {
        raw.reference_splits = Some(parse_splits(s, "reference_splits")?);
    }
    Ok(raw)
}

fn parse_lines(text: &str) -> Result<RawCorpus, CorpusError> {
    let mut raw = RawCorpus::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|source| CorpusError::Json {
            line: Some(lineno + 1),
            source,
        })?;
        let record = format!("line {}", lineno + 1);
        let obj = as_object(&v, &record)?;
        if let Some(r) = obj.get("reference") {
            raw.references.push(parse_reference(r, raw.references.len())?);
        } else if let Some(e) = obj.get("example") {
            raw.examples.push(parse_example(e, raw.examples.len())?);
        } else if let Some(s) = obj.get("splits") {
            raw.splits = parse_splits(s, "splits")?;
        } else if let Some(s) = obj.get("reference_splits") {
            raw.reference_splits = Some(parse_splits(s, "reference_splits")?);
        } else {
            return Err(malformed(&record, "<record>", "expected one of reference/example/splits"));
        }
    }
    Ok(raw)
}

/// Reads and validates a corpus file.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Corpus::from_str_with(&text, format)
}

impl Corpus {
    pub fn from_str_with(text: &str, format: CorpusFormat) -> Result<Corpus, CorpusError> {
        let raw = match format {
            CorpusFormat::Json => parse_document(text)?,
            CorpusFormat::JsonLines => parse_lines(text)?,
        };
        Corpus::build(raw.references, raw.examples, raw.splits, raw.reference_splits)
    }

    /// Builds a corpus from already-parsed parts, checking every invariant.
    pub fn from_parts(
        references: Vec<Reference>,
        examples: Vec<(u64, String)>,
        splits: Splits,
    ) -> Result<Corpus, CorpusError> {
        Corpus::build(references, examples, splits, None)
    }

    fn build(
        references: Vec<Reference>,
        raw_examples: Vec<(u64, String)>,
        splits: Splits,
        reference_splits: Option<Splits>,
    ) -> Result<Corpus, CorpusError> {
        let mut by_title: BTreeMap<String, Reference> = BTreeMap::new();
        let mut by_id = HashMap::new();
        for r in references {
            let key = r.canonical_title();
            if let Some(prev) = by_title.get(&key) {
                return Err(CorpusError::DuplicateTitle {
                    title: key,
                    first: prev.id,
                    first_title: prev.title.clone(),
                    second: r.id,
                    second_title: r.title,
                });
            }
            if by_id.insert(r.id, key.clone()).is_some() {
                return Err(CorpusError::DuplicateId(r.id));
            }
            by_title.insert(key, r);
        }

        let mut seen: HashMap<u64, Split> = HashMap::new();
        for split in Split::ALL {
            for &id in splits.get(split) {
                if let Some(prev) = seen.insert(id, split) {
                    if prev != split {
                        return Err(CorpusError::OverlappingSplits {
                            id,
                            a: prev.as_str(),
                            b: split.as_str(),
                        });
                    }
                }
            }
        }

        let mut examples = Vec::with_capacity(raw_examples.len());
        let mut diagnostics = Vec::new();
        for (theorem_id, raw) in raw_examples {
            let record = format!("example for theorem {theorem_id}");
            match by_id.get(&theorem_id).and_then(|t| by_title.get(t)) {
                None => return Err(malformed(&record, "theorem_id", "no reference with this id")),
                Some(r) if r.kind != RefKind::Theorem => {
                    return Err(malformed(&record, "theorem_id", "reference is not a theorem"))
                }
                Some(_) => {}
            }
            let proof = segment_proof(&raw);
            if !proof.is_valid_gold() {
                return Err(malformed(&record, "proof", "proof has no steps"));
            }
            for title in proof.ordered_ref_titles() {
                if !by_title.contains_key(&title) {
                    diagnostics.push(DanglingMention {
                        theorem_id,
                        split: seen.get(&theorem_id).copied(),
                        title,
                    });
                }
            }
            examples.push(Example { theorem_id, proof });
        }

        Ok(Corpus {
            references: by_title,
            by_id,
            examples,
            splits,
            reference_splits,
            diagnostics,
        })
    }

    pub fn references(&self) -> impl Iterator<Item = &Reference> {
        self.references.values()
    }

    pub fn num_references(&self) -> usize {
        self.references.len()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    /// Dangling mentions found in gold proofs.
    pub fn diagnostics(&self) -> &[DanglingMention] {
        &self.diagnostics
    }

    /// Looks a page up by title; the title is normalized first.
    pub fn resolve(&self, title: &str) -> Option<&Reference> {
        self.references.get(&normalize_title(title))
    }

    pub fn reference_by_id(&self, id: u64) -> Option<&Reference> {
        self.by_id.get(&id).and_then(|t| self.references.get(t))
    }

    pub fn split_of(&self, theorem_id: u64) -> Option<Split> {
        Split::ALL
            .into_iter()
            .find(|&s| self.splits.get(s).contains(&theorem_id))
    }

    /// Examples whose theorem belongs to `split`, in file order.
    pub fn examples_in(&self, split: Split) -> impl Iterator<Item = &Example> {
        let ids: HashSet<u64> = self.splits.get(split).iter().copied().collect();
        self.examples.iter().filter(move |e| ids.contains(&e.theorem_id))
    }

    /// First gold proof stored for a theorem.
    pub fn gold_proof(&self, theorem_id: u64) -> Option<&ProofDocument> {
        self.examples
            .iter()
            .find(|e| e.theorem_id == theorem_id)
            .map(|e| &e.proof)
    }

    /// Training reference set, in title order.
    pub fn train_references(&self) -> Vec<&Reference> {
        match &self.reference_splits {
            Some(rs) => {
                let ids: HashSet<u64> = rs.train.iter().copied().collect();
                self.references().filter(|r| ids.contains(&r.id)).collect()
            }
            None => {
                let held_out: HashSet<u64> = self
                    .splits
                    .valid
                    .iter()
                    .chain(self.splits.test.iter())
                    .copied()
                    .collect();
                self.references().filter(|r| !held_out.contains(&r.id)).collect()
            }
        }
    }

    /// Case-preserving substring search over canonical titles.
    pub fn search_titles(&self, query: &str) -> Vec<&Reference> {
        let q = normalize_title(query);
        self.references
            .iter()
            .filter(|(t, _)| q.is_empty() || t.contains(&q))
            .map(|(_, r)| r)
            .collect()
    }
}
