//! Python bindings for groundprover.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use groundprover::corpus::{self, load_corpus, CorpusFormat, MentionKind, ReferenceMention, Split};
use groundprover::decoder::{self, DecodeConfig, DecodeMode, DecodeProblem};
use groundprover::lmbackend::{self, MockScript, Sampler};
use groundprover::metrics::{self, MetricReport};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A `[[Namespace:Title|surface]]` link.
#[pyclass(frozen, module = "groundprover_py")]
pub struct Mention {
    #[pyo3(get)]
    pub kind: String,
    #[pyo3(get)]
    pub namespace: Option<String>,
    #[pyo3(get)]
    pub target_title: String,
    #[pyo3(get)]
    pub surface: String,
    #[pyo3(get)]
    pub start: usize,
    #[pyo3(get)]
    pub end: usize,
    inner: ReferenceMention,
}

impl From<ReferenceMention> for Mention {
    fn from(m: ReferenceMention) -> Self {
        let kind = match m.target_kind {
            MentionKind::Definition => "definition",
            MentionKind::Theorem => "theorem",
            MentionKind::Axiom => "axiom",
            MentionKind::Other => "other",
        };
        Mention {
            kind: kind.into(),
            namespace: m.namespace.clone(),
            target_title: m.target_title.clone(),
            surface: m.surface.clone(),
            start: m.span.start,
            end: m.span.end,
            inner: m,
        }
    }
}

#[pymethods]
impl Mention {
    fn canonical_title(&self) -> String {
        self.inner.canonical_title()
    }

    fn to_wikitext(&self) -> String {
        self.inner.to_wikitext()
    }

    fn __repr__(&self) -> String {
        format!("Mention({:?}, {:?})", self.inner.canonical_title(), self.surface)
    }
}

#[pyfunction]
fn parse_mentions(text: &str) -> Vec<Mention> {
    corpus::parse_mentions(text).into_iter().map(Mention::from).collect()
}

#[pyfunction]
fn normalize(text: &str) -> String {
    corpus::normalize(text)
}

#[pyfunction]
fn normalize_title(title: &str) -> String {
    corpus::normalize_title(title)
}

/// Splits a raw proof into steps and returns their text.
#[pyfunction]
fn segment_proof(text: &str) -> Vec<String> {
    corpus::segment_proof(text).steps.into_iter().map(|s| s.raw).collect()
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    metrics::tokenize(text)
}

#[pyfunction]
fn gleu(hypothesis: &str, reference: &str) -> f64 {
    metrics::gleu(&metrics::tokenize(hypothesis), &metrics::tokenize(reference))
}

#[pyfunction]
fn token_f1(hypothesis: &str, reference: &str) -> f64 {
    metrics::token_f1(&metrics::tokenize(hypothesis), &metrics::tokenize(reference))
}

/// Precision, recall and F1 of generated titles against gold titles.
#[pyfunction]
fn ref_prf(generated: Vec<String>, gold: Vec<String>) -> (f64, f64, f64) {
    let g: BTreeSet<String> = generated.iter().map(|t| corpus::normalize_title(t)).collect();
    let r: BTreeSet<String> = gold.iter().map(|t| corpus::normalize_title(t)).collect();
    metrics::ref_prf(&g, &r)
}

#[pyfunction]
fn pearson(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    metrics::pearson(&xs, &ys).map_err(value_err)
}

#[pyfunction]
fn value_scores(counts: Vec<f64>, logprobs: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    if counts.len() != logprobs.len() {
        return Err(value_err("counts and logprobs differ in length"));
    }
    Ok(decoder::value_scores(&counts, &logprobs, alpha))
}

fn parse_split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        other => Err(value_err(format!("unknown split {other:?}"))),
    }
}

fn parse_mode(name: &str) -> PyResult<DecodeMode> {
    match name {
        "greedy" => Ok(DecodeMode::Greedy),
        "rerank" => Ok(DecodeMode::Rerank),
        "stepwise" => Ok(DecodeMode::Stepwise),
        "stepwisepp" => Ok(DecodeMode::Stepwisepp),
        other => Err(value_err(format!("unknown mode {other:?}"))),
    }
}

#[pyclass(frozen, module = "groundprover_py")]
pub struct Corpus {
    inner: corpus::Corpus,
}

impl Corpus {
    fn theorem(&self, id: u64) -> PyResult<&corpus::Reference> {
        self.inner
            .reference_by_id(id)
            .ok_or_else(|| PyKeyError::new_err(format!("no reference with id {id}")))
    }
}

#[pymethods]
impl Corpus {
    /// Loads a JSON or JSON-lines corpus.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let format = CorpusFormat::from_path(&path);
        let inner = load_corpus(&path, format).map_err(value_err)?;
        Ok(Corpus { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = corpus::Corpus::from_str_with(text, CorpusFormat::Json).map_err(value_err)?;
        Ok(Corpus { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.num_references()
    }

    /// Theorem ids with a proof in `split`.
    #[pyo3(signature = (split = "test"))]
    fn theorem_ids(&self, split: &str) -> PyResult<Vec<u64>> {
        Ok(self.inner.examples_in(parse_split(split)?).map(|e| e.theorem_id).collect())
    }

    fn title(&self, id: u64) -> PyResult<String> {
        Ok(self.theorem(id)?.title.clone())
    }

    fn content(&self, id: u64) -> PyResult<String> {
        Ok(self.theorem(id)?.content.join("\n"))
    }

    /// Gold proof steps, or `None` when the theorem has no proof.
    fn gold_proof(&self, id: u64) -> Option<Vec<String>> {
        self.inner
            .gold_proof(id)
            .map(|p| p.steps.iter().map(|s| s.raw.clone()).collect())
    }

    /// Titles referenced by the gold proof, in order of first mention.
    fn gold_titles(&self, id: u64) -> Option<Vec<String>> {
        self.inner.gold_proof(id).map(|p| p.ordered_ref_titles())
    }

    fn search(&self, query: &str) -> Vec<String> {
        self.inner.search_titles(query).into_iter().map(|r| r.title.clone()).collect()
    }

    /// Scores a generated proof against the gold proof of `id`.
    fn score(&self, id: u64, proof: &str) -> PyResult<HashMap<String, f64>> {
        let gold = self
            .inner
            .gold_proof(id)
            .ok_or_else(|| PyKeyError::new_err(format!("theorem {id} has no gold proof")))?;
        let report = metrics::score_proof(&corpus::segment_proof(proof), gold, &self.inner);
        Ok(metric_dict(&report))
    }
}

fn metric_dict(report: &MetricReport) -> HashMap<String, f64> {
    MetricReport::NAMES
        .iter()
        .zip(report.values())
        .map(|(n, v)| (n.to_string(), v))
        .collect()
}

/// Deterministic scripted backend.
#[pyclass(frozen, module = "groundprover_py")]
pub struct MockBackend {
    inner: lmbackend::MockBackend,
}

#[pymethods]
impl MockBackend {
    /// Builds a backend from a JSON mock script.
    #[new]
    #[pyo3(signature = (script_json, seed = 0))]
    fn new(script_json: &str, seed: u64) -> PyResult<Self> {
        let script: MockScript = serde_json::from_str(script_json).map_err(value_err)?;
        let inner = lmbackend::configure_mock(&script, seed).map_err(value_err)?;
        Ok(MockBackend { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, seed = 0))]
    fn from_file(path: PathBuf, seed: u64) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| value_err(format!("{}: {e}", path.display())))?;
        Self::new(&text, seed)
    }

    /// `(requests, samples, generated_tokens)` so far.
    fn usage(&self) -> (u64, u64, u64) {
        let u = self.inner.usage();
        (u.requests, u.samples, u.generated_tokens)
    }
}

/// Result of decoding one theorem.
#[pyclass(frozen, get_all, module = "groundprover_py")]
pub struct Proof {
    pub steps: Vec<String>,
    pub logprob: f64,
    pub terminated: bool,
    pub covered_titles: Vec<String>,
    pub samples: usize,
    /// Full search trace as JSON.
    pub trace_json: String,
}

#[pymethods]
impl Proof {
    fn text(&self) -> String {
        self.steps.join("\n\n")
    }

    fn __repr__(&self) -> String {
        format!("Proof(steps={}, logprob={:.4})", self.steps.len(), self.logprob)
    }
}

/// Decodes a proof of theorem `theorem_id`. Without `ref_titles` the gold
/// proof's titles are used.
#[pyfunction]
#[pyo3(signature = (corpus, theorem_id, backend, mode = "stepwisepp", ref_titles = None, salt = 0))]
fn decode(
    corpus: &Corpus,
    theorem_id: u64,
    backend: &MockBackend,
    mode: &str,
    ref_titles: Option<Vec<String>>,
    salt: u64,
) -> PyResult<Proof> {
    let theorem = corpus.theorem(theorem_id)?;
    let titles = match ref_titles {
        Some(t) => t,
        None => corpus
            .inner
            .gold_proof(theorem_id)
            .map(|p| p.ordered_ref_titles())
            .unwrap_or_default(),
    };
    let config = DecodeConfig { mode: parse_mode(mode)?, ..Default::default() };
    let problem = DecodeProblem { theorem, ref_titles: &titles, salt };
    let (best, trace) = decoder::decode(&problem, &backend.inner, &config).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(Proof {
        samples: trace.expansions,
        trace_json: serde_json::to_string(&trace).map_err(value_err)?,
        covered_titles: best.covered_titles.into_iter().collect(),
        steps: best.steps,
        logprob: best.cum_logprob,
        terminated: best.terminated,
    })
}

#[pymodule]
pub fn groundprover_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mention>()?;
    m.add_class::<Corpus>()?;
    m.add_class::<MockBackend>()?;
    m.add_class::<Proof>()?;
    m.add_function(wrap_pyfunction!(parse_mentions, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_title, m)?)?;
    m.add_function(wrap_pyfunction!(segment_proof, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(gleu, m)?)?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(ref_prf, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(value_scores, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    Ok(())
}
