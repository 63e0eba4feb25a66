//! Experiment runner: full-proof and next-step evaluation, annotation
//! aggregation and metric/judgment correlation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_title, segment_proof, Corpus, ProofDocument, ProofStep, Reference, Split};
use crate::decoder::{decode, DecodeConfig, DecodeError, DecodeProblem, TraceSummary};
use crate::lmbackend::{FinishReason, SampleRequest, Sampler, StreamKey, Usage};
use crate::metrics::{best_of_k, pearson, score_proof, MetricReport};
use crate::promptgen::{render_inference_prompt, KnowledgeSetting, PROOF_CLOSE, RETRIEVED_TOP_K};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    FullProof,
    NextStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub setting: KnowledgeSetting,
    pub task: Task,
    pub decode: DecodeConfig,
    pub split: Split,
    pub theorem_filter: Option<Vec<u64>>,
    pub retrievals_path: Option<PathBuf>,
    /// Next-step candidates per step.
    pub suggestions_k: usize,
    /// Next-step sampling temperature.
    pub temperature: f64,
    /// Caps the number of gold steps evaluated per proof in next-step runs.
    pub max_steps_per_proof: Option<usize>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setting: KnowledgeSetting::None,
            task: Task::FullProof,
            decode: DecodeConfig::default(),
            split: Split::Test,
            theorem_filter: None,
            retrievals_path: None,
            suggestions_k: 10,
            temperature: 1.0,
            max_steps_per_proof: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("parsing config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("no theorems selected from the {0} split")]
    EmptySelection(&'static str),
    #[error("{failed} of {attempted} theorems failed")]
    TooManyFailures {
        failed: usize,
        attempted: usize,
        report: Box<RunReport>,
    },
    #[error("correlation needs at least two matched settings, got {0}")]
    TooFewSettings(usize),
    #[error("writing CSV: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks field ranges and the setting/task/decoder compatibility rules:
    /// stepwise modes need provided references and the full-proof task.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.decode.validate()?;
        if self.setting == KnowledgeSetting::Retrieved && self.retrievals_path.is_none() {
            return Err(HarnessError::Config("the retrieved setting needs retrievals_path".into()));
        }
        if self.decode.mode.is_stepwise() {
            if self.setting != KnowledgeSetting::Provided {
                return Err(HarnessError::Config(format!(
                    "stepwise decoding needs provided references, not {:?}",
                    self.setting
                )));
            }
            if self.task != Task::FullProof {
                return Err(HarnessError::Config("stepwise decoding is only used for full proofs".into()));
            }
        }
        if self.suggestions_k == 0 {
            return Err(HarnessError::Config("suggestions_k must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(HarnessError::Config(format!("temperature {} is invalid", self.temperature)));
        }
        if self.max_steps_per_proof == Some(0) {
            return Err(HarnessError::Config("max_steps_per_proof must be at least 1".into()));
        }
        Ok(())
    }
}

/// Retrieved titles per theorem, plus anything suspicious found on load.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Retrievals {
    pub lists: BTreeMap<u64, Vec<String>>,
    pub warnings: Vec<String>,
}

/// Reads a JSON object mapping theorem ids to ranked title lists.
///
/// Lists shorter than 20 are kept with a warning; duplicate titles keep
/// their first position. With a corpus, ids it does not know are reported.
pub fn load_retrievals(path: &Path, corpus: Option<&Corpus>) -> Result<Retrievals, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_retrievals(&text, corpus).map_err(|message| HarnessError::Malformed {
        path: path.display().to_string(),
        message,
    })
}

pub fn parse_retrievals(text: &str, corpus: Option<&Corpus>) -> Result<Retrievals, String> {
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut out = Retrievals::default();
    for (key, titles) in raw {
        let id: u64 = key
            .trim()
            .parse()
            .map_err(|_| format!("theorem id {key:?} is not an integer"))?;
        let mut seen = BTreeSet::new();
        let mut list = Vec::with_capacity(titles.len());
        for t in titles {
            if seen.insert(normalize_title(&t)) {
                list.push(t);
            } else {
                out.warnings.push(format!("theorem {id}: duplicate title {t:?} dropped"));
            }
        }
        if list.len() < RETRIEVED_TOP_K {
            out.warnings
                .push(format!("theorem {id}: only {} retrieved titles", list.len()));
        }
        if let Some(c) = corpus {
            if c.reference_by_id(id).is_none() {
                out.warnings.push(format!("theorem {id} is not in the corpus"));
            }
        }
        out.lists.insert(id, list);
    }
    for w in &out.warnings {
        tracing::warn!("{w}");
    }
    Ok(out)
}

/// One scored unit: a whole proof, or one step of a gold proof.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub theorem_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_index: Option<usize>,
    pub constraint_titles: Vec<String>,
    pub generated: Vec<String>,
    pub covered_titles: BTreeSet<String>,
    pub metrics: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSummary>,
    /// Next-step runs: every suggestion with its metric sum.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub candidates: Vec<SuggestionScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestionScore {
    pub text: String,
    pub logprob: f64,
    pub combined: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub theorem_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_index: Option<usize>,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: Task,
    pub setting: KnowledgeSetting,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Theorems attempted.
    pub attempted: usize,
    pub items: Vec<ScoredItem>,
    pub failures: Vec<ItemFailure>,
    /// Means over `items`; `None` when nothing was scored.
    pub means: Option<MetricReport>,
    pub usage: Usage,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Writes a header row of metric names and one row of means.
    pub fn write_means_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["setting", "task", "items"];
        header.extend(MetricReport::NAMES);
        w.write_record(&header)?;
        let mut row = vec![
            format!("{:?}", self.setting).to_lowercase(),
            format!("{:?}", self.task).to_lowercase(),
            self.items.len().to_string(),
        ];
        match &self.means {
            Some(m) => row.extend(m.values().iter().map(|v| v.to_string())),
            None => row.extend(MetricReport::NAMES.iter().map(|_| String::new())),
        }
        w.write_record(&row)?;
        w.flush().map_err(|e| HarnessError::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

fn stream_salt(seed: u64, theorem_id: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ theorem_id
}

/// Theorem ids of the configured split, first occurrence order, narrowed by
/// the filter.
fn selected_theorems(config: &ExperimentConfig, corpus: &Corpus) -> Vec<u64> {
    let mut seen = BTreeSet::new();
    let mut ids: Vec<u64> = corpus
        .examples_in(config.split)
        .map(|e| e.theorem_id)
        .filter(|id| seen.insert(*id))
        .collect();
    if let Some(filter) = &config.theorem_filter {
        let keep: BTreeSet<u64> = filter.iter().copied().collect();
        for id in keep.iter().filter(|id| !seen.contains(id)) {
            tracing::warn!(theorem = id, split = config.split.as_str(), "filtered theorem is not in the split");
        }
        ids.retain(|id| keep.contains(id));
    }
    ids
}

/// Titles the model sees for one theorem under `setting`.
pub fn constraint_titles(
    setting: KnowledgeSetting,
    gold: &ProofDocument,
    theorem_id: u64,
    retrievals: Option<&Retrievals>,
) -> Result<Vec<String>, String> {
    match setting {
        KnowledgeSetting::None => Ok(Vec::new()),
        KnowledgeSetting::Provided => Ok(gold.ordered_ref_titles()),
        KnowledgeSetting::Retrieved => retrievals
            .and_then(|r| r.lists.get(&theorem_id))
            .map(|l| l.iter().take(RETRIEVED_TOP_K).cloned().collect())
            .ok_or_else(|| format!("no retrievals for theorem {theorem_id}")),
    }
}

fn document(steps: &[String]) -> ProofDocument {
    ProofDocument::from_steps(steps.iter().map(|s| ProofStep::from_text(s)).collect())
}

fn retrievals_for(config: &ExperimentConfig, corpus: &Corpus) -> Result<Option<Retrievals>, HarnessError> {
    match (&config.setting, &config.retrievals_path) {
        (KnowledgeSetting::Retrieved, Some(p)) => Ok(Some(load_retrievals(p, Some(corpus))?)),
        _ => Ok(None),
    }
}

fn finish(
    config: &ExperimentConfig,
    attempted: usize,
    mut items: Vec<ScoredItem>,
    mut failures: Vec<ItemFailure>,
    usage: Usage,
) -> Result<RunReport, HarnessError> {
    items.sort_by_key(|i| (i.theorem_id, i.step_index));
    failures.sort_by_key(|f| (f.theorem_id, f.step_index));
    let metrics: Vec<MetricReport> = items.iter().map(|i| i.metrics.clone()).collect();
    let failed_theorems: BTreeSet<u64> = failures.iter().map(|f| f.theorem_id).collect();
    let report = RunReport {
        task: config.task,
        setting: config.setting,
        seed: config.seed,
        config: config.clone(),
        attempted,
        means: MetricReport::mean(&metrics),
        items,
        failures,
        usage,
    };
    if failed_theorems.len() * 2 > attempted {
        return Err(HarnessError::TooManyFailures {
            failed: failed_theorems.len(),
            attempted,
            report: Box::new(report),
        });
    }
    Ok(report)
}

fn usage_delta(before: Usage, after: Usage) -> Usage {
    Usage {
        requests: after.requests - before.requests,
        samples: after.samples - before.samples,
        generated_tokens: after.generated_tokens - before.generated_tokens,
    }
}

/// Decodes and scores a full proof for every selected theorem.
pub fn run_full_proof(config: &ExperimentConfig, corpus: &Corpus, backend: &dyn Sampler) -> Result<RunReport, HarnessError> {
    let retrievals = retrievals_for(config, corpus)?;
    run_full_proof_with(config, corpus, backend, retrievals.as_ref())
}

/// [`run_full_proof`] with retrievals already loaded.
pub fn run_full_proof_with(
    config: &ExperimentConfig,
    corpus: &Corpus,
    backend: &dyn Sampler,
    retrievals: Option<&Retrievals>,
) -> Result<RunReport, HarnessError> {
    config.validate()?;
    if config.task != Task::FullProof {
        return Err(HarnessError::Config("run_full_proof needs task = full_proof".into()));
    }
    let ids = selected_theorems(config, corpus);
    if ids.is_empty() {
        return Err(HarnessError::EmptySelection(config.split.as_str()));
    }
    let before = backend.usage();
    let outcomes: Vec<Result<ScoredItem, ItemFailure>> = ids
        .par_iter()
        .map(|&id| prove_one(config, corpus, backend, retrievals, id))
        .collect();
    let (items, failures) = split_outcomes(outcomes);
    finish(config, ids.len(), items, failures, usage_delta(before, backend.usage()))
}

fn split_outcomes<T, E>(outcomes: Vec<Result<T, E>>) -> (Vec<T>, Vec<E>) {
    let mut ok = Vec::new();
    let mut err = Vec::new();
    for o in outcomes {
        match o {
            Ok(v) => ok.push(v),
            Err(e) => err.push(e),
        }
    }
    (ok, err)
}

fn prove_one(
    config: &ExperimentConfig,
    corpus: &Corpus,
    backend: &dyn Sampler,
    retrievals: Option<&Retrievals>,
    theorem_id: u64,
) -> Result<ScoredItem, ItemFailure> {
    let fail = |error: String| ItemFailure {
        theorem_id,
        step_index: None,
        error,
    };
    let theorem = corpus
        .reference_by_id(theorem_id)
        .ok_or_else(|| fail("theorem is not in the corpus".into()))?;
    let gold = corpus
        .gold_proof(theorem_id)
        .ok_or_else(|| fail("no gold proof".into()))?;
    let titles = constraint_titles(config.setting, gold, theorem_id, retrievals).map_err(fail)?;
    let problem = DecodeProblem {
        theorem,
        ref_titles: &titles,
        salt: stream_salt(config.seed, theorem_id),
    };
    let (best, trace) = decode(&problem, backend, &config.decode).map_err(|e| {
        tracing::warn!(theorem = theorem_id, error = %e, "decode failed");
        fail(e.to_string())
    })?;
    let generated = document(&best.steps);
    Ok(ScoredItem {
        theorem_id,
        step_index: None,
        constraint_titles: titles,
        metrics: score_proof(&generated, gold, corpus),
        covered_titles: best.covered_titles,
        generated: best.steps,
        trace: Some(trace.summary()),
        candidates: Vec::new(),
        selected: None,
    })
}

/// One sampled next step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub text: String,
    pub logprob: f64,
    /// The step closes the proof.
    pub terminated: bool,
    pub token_count: usize,
}

/// Settings for sampling next steps for one proof state.
#[derive(Clone, Copy, Debug)]
pub struct SuggestParams<'a> {
    pub decode: &'a DecodeConfig,
    pub k: usize,
    pub temperature: f64,
    pub stream: StreamKey,
}

/// `k` next-step suggestions after `history`.
pub fn sample_next_steps(
    theorem: &Reference,
    titles: &[String],
    history: &[String],
    params: SuggestParams<'_>,
    backend: &dyn Sampler,
) -> Result<Vec<Suggestion>, DecodeError> {
    let budgets = &params.decode.budgets;
    let counter = |s: &str| backend.count_tokens(s);
    let prompt = render_inference_prompt(theorem, titles, Some(history), budgets, &counter)?;
    let request = SampleRequest::new(prompt, params.temperature, params.k, budgets.max_step_tokens)
        .with_stop([params.decode.step_separator.as_str()])
        .with_stream(params.stream);
    let results = backend.sample(&request).map_err(|source| DecodeError::Backend {
        source,
        trace: Box::default(),
    })?;
    Ok(results
        .into_iter()
        .map(|r| {
            let (body, closed) = match r.text.find(PROOF_CLOSE) {
                Some(pos) => (&r.text[..pos], true),
                None => (r.text.as_str(), false),
            };
            Suggestion {
                text: body.trim().to_string(),
                logprob: r.logprob,
                terminated: closed || r.truncated_by == FinishReason::End,
                token_count: r.token_count,
            }
        })
        .collect())
}

/// Best-of-k next-step evaluation over every step of every selected proof.
pub fn run_next_step(config: &ExperimentConfig, corpus: &Corpus, backend: &dyn Sampler) -> Result<RunReport, HarnessError> {
    let retrievals = retrievals_for(config, corpus)?;
    run_next_step_with(config, corpus, backend, retrievals.as_ref())
}

pub fn run_next_step_with(
    config: &ExperimentConfig,
    corpus: &Corpus,
    backend: &dyn Sampler,
    retrievals: Option<&Retrievals>,
) -> Result<RunReport, HarnessError> {
    config.validate()?;
    if config.task != Task::NextStep {
        return Err(HarnessError::Config("run_next_step needs task = next_step".into()));
    }
    let ids = selected_theorems(config, corpus);
    if ids.is_empty() {
        return Err(HarnessError::EmptySelection(config.split.as_str()));
    }
    let mut units = Vec::new();
    let mut failures = Vec::new();
    for &id in &ids {
        match corpus.gold_proof(id) {
            Some(gold) => {
                let n = config
                    .max_steps_per_proof
                    .map_or(gold.steps.len(), |m| m.min(gold.steps.len()));
                units.extend((0..n).map(|t| (id, t)));
            }
            None => failures.push(ItemFailure {
                theorem_id: id,
                step_index: None,
                error: "no gold proof".into(),
            }),
        }
    }
    let before = backend.usage();
    let outcomes: Vec<Result<ScoredItem, ItemFailure>> = units
        .par_iter()
        .map(|&(id, t)| suggest_one(config, corpus, backend, retrievals, id, t))
        .collect();
    let (items, more) = split_outcomes(outcomes);
    failures.extend(more);
    finish(config, ids.len(), items, failures, usage_delta(before, backend.usage()))
}

fn suggest_one(
    config: &ExperimentConfig,
    corpus: &Corpus,
    backend: &dyn Sampler,
    retrievals: Option<&Retrievals>,
    theorem_id: u64,
    step: usize,
) -> Result<ScoredItem, ItemFailure> {
    let fail = |error: String| ItemFailure {
        theorem_id,
        step_index: Some(step),
        error,
    };
    let theorem = corpus
        .reference_by_id(theorem_id)
        .ok_or_else(|| fail("theorem is not in the corpus".into()))?;
    let gold = corpus
        .gold_proof(theorem_id)
        .ok_or_else(|| fail("no gold proof".into()))?;
    let titles = constraint_titles(config.setting, gold, theorem_id, retrievals).map_err(fail)?;
    let history: Vec<String> = gold.steps[..step].iter().map(|s| s.raw.clone()).collect();
    let stream = StreamKey {
        salt: stream_salt(config.seed, theorem_id),
        iteration: step as u64,
        beam: 0,
        group: 0,
    };
    let params = SuggestParams {
        decode: &config.decode,
        k: config.suggestions_k,
        temperature: config.temperature,
        stream,
    };
    let suggestions = sample_next_steps(theorem, &titles, &history, params, backend).map_err(|e| fail(e.to_string()))?;

    let gold_step = ProofDocument::from_steps(vec![gold.steps[step].clone()]);
    let reports: Vec<MetricReport> = suggestions
        .iter()
        .map(|sg| score_proof(&document(std::slice::from_ref(&sg.text)), &gold_step, corpus))
        .collect();
    let best = best_of_k(&reports).ok_or_else(|| fail("backend returned no suggestions".into()))?;
    let chosen = document(std::slice::from_ref(&suggestions[best].text));
    Ok(ScoredItem {
        theorem_id,
        step_index: Some(step),
        constraint_titles: titles,
        generated: vec![suggestions[best].text.clone()],
        covered_titles: chosen.ref_titles,
        metrics: reports[best].clone(),
        trace: None,
        candidates: suggestions
            .iter()
            .zip(&reports)
            .map(|(sg, r)| SuggestionScore {
                text: sg.text.clone(),
                logprob: sg.logprob,
                combined: r.combined(),
            })
            .collect(),
        selected: Some(best),
    })
}

/// Runs whichever task the config names.
pub fn run(config: &ExperimentConfig, corpus: &Corpus, backend: &dyn Sampler) -> Result<RunReport, HarnessError> {
    match config.task {
        Task::FullProof => run_full_proof(config, corpus, backend),
        Task::NextStep => run_next_step(config, corpus, backend),
    }
}

/// Per-proof and mean scores for externally produced proofs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub items: Vec<ScoredPrediction>,
    pub skipped: Vec<ItemFailure>,
    pub means: Option<MetricReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub theorem_id: u64,
    pub metrics: MetricReport,
}

#[derive(Clone, Debug, Deserialize)]
struct Prediction {
    theorem_id: u64,
    proof: String,
}

/// Scores a JSON-lines predictions file of `{theorem_id, proof}`.
pub fn score_predictions(text: &str, corpus: &Corpus) -> Result<ScoreReport, String> {
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: Prediction = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        match corpus.gold_proof(p.theorem_id) {
            Some(gold) => items.push(ScoredPrediction {
                theorem_id: p.theorem_id,
                metrics: score_proof(&segment_proof(&p.proof), gold, corpus),
            }),
            None => skipped.push(ItemFailure {
                theorem_id: p.theorem_id,
                step_index: None,
                error: "no gold proof".into(),
            }),
        }
    }
    let metrics: Vec<MetricReport> = items.iter().map(|i| i.metrics.clone()).collect();
    Ok(ScoreReport {
        means: MetricReport::mean(&metrics),
        items,
        skipped,
    })
}

/// Step-level error labels from the annotation schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineError {
    InvalidDeployment,
    InvalidJustification,
    HallucinatedRef,
    SelfLoop,
    InvalidEquation,
    InvalidDerivation,
    SkipsSteps,
    Repetition,
    InvalidOther,
    Incomplete,
    MisformattedMath,
    UnknownSymbol,
    Undefined,
    Overloaded,
    Mistyped,
    Unconventional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorBucket {
    Reference,
    Equation,
    OtherReasoning,
    Language,
    Symbolic,
}

impl ErrorBucket {
    pub const ALL: [ErrorBucket; 5] = [
        ErrorBucket::Reference,
        ErrorBucket::Equation,
        ErrorBucket::OtherReasoning,
        ErrorBucket::Language,
        ErrorBucket::Symbolic,
    ];
}

impl FineError {
    pub const ALL: [FineError; 16] = [
        FineError::InvalidDeployment,
        FineError::InvalidJustification,
        FineError::HallucinatedRef,
        FineError::SelfLoop,
        FineError::InvalidEquation,
        FineError::InvalidDerivation,
        FineError::SkipsSteps,
        FineError::Repetition,
        FineError::InvalidOther,
        FineError::Incomplete,
        FineError::MisformattedMath,
        FineError::UnknownSymbol,
        FineError::Undefined,
        FineError::Overloaded,
        FineError::Mistyped,
        FineError::Unconventional,
    ];

    pub fn bucket(self) -> ErrorBucket {
        use FineError::*;
        match self {
            InvalidDeployment | InvalidJustification | HallucinatedRef | SelfLoop => ErrorBucket::Reference,
            InvalidEquation | InvalidDerivation => ErrorBucket::Equation,
            SkipsSteps | Repetition | InvalidOther => ErrorBucket::OtherReasoning,
            Incomplete | MisformattedMath | UnknownSymbol => ErrorBucket::Language,
            Undefined | Overloaded | Mistyped | Unconventional => ErrorBucket::Symbolic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCorrect {
    Yes,
    No,
    CannotDetermine,
    Meaningless,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub theorem_id: u64,
    pub step_index: usize,
    #[serde(default)]
    pub fine_grained_errors: BTreeSet<FineError>,
    pub step_correct: StepCorrect,
    pub step_useful: bool,
    pub overall_correct: u8,
    pub overall_useful: u8,
}

/// Reads JSON-lines annotation records, rejecting scores outside 0..=5.
pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: AnnotationRecord = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        if r.overall_correct > 5 || r.overall_useful > 5 {
            return Err(format!("line {}: overall scores must be in 0..=5", i + 1));
        }
        out.push(r);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    pub correct: u8,
    pub useful: u8,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { correct: 4, useful: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub steps: usize,
    pub proofs: usize,
    /// No records were given; every rate is 0.
    pub empty: bool,
    pub fine: BTreeMap<FineError, f64>,
    pub coarse: BTreeMap<ErrorBucket, f64>,
    pub step_correct: f64,
    pub step_useful: f64,
    pub overall_correct: f64,
    pub overall_useful: f64,
    pub thresholds: Thresholds,
}

impl AggregateReport {
    /// Human columns used for correlation; error rates are negated.
    pub fn human_metrics(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = ErrorBucket::ALL
            .iter()
            .map(|b| (format!("{}_errors", bucket_name(*b)), -self.coarse[b]))
            .collect();
        out.push(("step_useful".into(), self.step_useful));
        out.push(("step_correct".into(), self.step_correct));
        out.push(("overall_useful".into(), self.overall_useful));
        out.push(("overall_correct".into(), self.overall_correct));
        out
    }
}

fn bucket_name(b: ErrorBucket) -> &'static str {
    match b {
        ErrorBucket::Reference => "reference",
        ErrorBucket::Equation => "equation",
        ErrorBucket::OtherReasoning => "other_reasoning",
        ErrorBucket::Language => "language",
        ErrorBucket::Symbolic => "symbolic",
    }
}

/// Step-level rates over all records; overall rates over proofs, taking each
/// theorem's first record.
pub fn aggregate_annotations(records: &[AnnotationRecord]) -> AggregateReport {
    aggregate_annotations_with(records, Thresholds::default())
}

pub fn aggregate_annotations_with(records: &[AnnotationRecord], thresholds: Thresholds) -> AggregateReport {
    let steps = records.len();
    let rate = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };

    let fine = FineError::ALL
        .iter()
        .map(|e| {
            let n = records.iter().filter(|r| r.fine_grained_errors.contains(e)).count();
            (*e, rate(n, steps))
        })
        .collect();
    let coarse = ErrorBucket::ALL
        .iter()
        .map(|b| {
            let n = records
                .iter()
                .filter(|r| r.fine_grained_errors.iter().any(|e| e.bucket() == *b))
                .count();
            (*b, rate(n, steps))
        })
        .collect();

    let mut proofs: BTreeMap<u64, &AnnotationRecord> = BTreeMap::new();
    for r in records {
        match proofs.get(&r.theorem_id) {
            Some(first) if (first.overall_correct, first.overall_useful) != (r.overall_correct, r.overall_useful) => {
                tracing::warn!(theorem = r.theorem_id, "conflicting overall scores; keeping the first");
            }
            Some(_) => {}
            None => {
                proofs.insert(r.theorem_id, r);
            }
        }
    }
    let np = proofs.len();
    AggregateReport {
        steps,
        proofs: np,
        empty: records.is_empty(),
        fine,
        coarse,
        step_correct: rate(records.iter().filter(|r| r.step_correct == StepCorrect::Yes).count(), steps),
        step_useful: rate(records.iter().filter(|r| r.step_useful).count(), steps),
        overall_correct: rate(proofs.values().filter(|r| r.overall_correct >= thresholds.correct).count(), np),
        overall_useful: rate(proofs.values().filter(|r| r.overall_useful >= thresholds.useful).count(), np),
        thresholds,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub automatic: String,
    pub human: String,
    /// `None` when undefined.
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub cells: Vec<CorrelationCell>,
}

impl CorrelationMatrix {
    pub fn get(&self, automatic: &str, human: &str) -> Option<&CorrelationCell> {
        self.cells
            .iter()
            .find(|c| c.automatic == automatic && c.human == human)
    }
}

impl fmt::Display for CorrelationMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cells {
            match c.r {
                Some(r) => writeln!(f, "{}\t{}\t{r:.4}", c.automatic, c.human)?,
                None => writeln!(f, "{}\t{}\tundefined", c.automatic, c.human)?,
            }
        }
        Ok(())
    }
}

/// Automatic metric columns used for correlation, hallucination negated.
pub fn automatic_metrics(m: &MetricReport) -> Vec<(String, f64)> {
    MetricReport::NAMES
        .iter()
        .zip(m.values())
        .map(|(n, v)| (n.to_string(), if *n == "halluc" { -v } else { v }))
        .collect()
}

/// Pearson r between every automatic and human metric across the settings
/// present in both lists, matched by label in run order.
pub fn correlate(
    runs: &[(String, MetricReport)],
    aggregates: &[(String, AggregateReport)],
) -> Result<CorrelationMatrix, HarnessError> {
    let matched: Vec<(&String, &MetricReport, &AggregateReport)> = runs
        .iter()
        .filter_map(|(label, m)| {
            aggregates
                .iter()
                .find(|(l, _)| l == label)
                .map(|(_, a)| (label, m, a))
        })
        .collect();
    if matched.len() < 2 {
        return Err(HarnessError::TooFewSettings(matched.len()));
    }
    let auto: Vec<Vec<(String, f64)>> = matched.iter().map(|(_, m, _)| automatic_metrics(m)).collect();
    let human: Vec<Vec<(String, f64)>> = matched.iter().map(|(_, _, a)| a.human_metrics()).collect();
    let mut cells = Vec::new();
    for (ai, (aname, _)) in auto[0].iter().enumerate() {
        let xs: Vec<f64> = auto.iter().map(|row| row[ai].1).collect();
        for (hi, (hname, _)) in human[0].iter().enumerate() {
            let ys: Vec<f64> = human.iter().map(|row| row[hi].1).collect();
            let (r, undefined) = match pearson(&xs, &ys) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            cells.push(CorrelationCell {
                automatic: aname.clone(),
                human: hname.clone(),
                r,
                undefined,
            });
        }
    }
    Ok(CorrelationMatrix {
        labels: matched.iter().map(|(l, _, _)| (*l).clone()).collect(),
        cells,
    })
}
