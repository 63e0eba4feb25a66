//! Segment-level constrained search.
//!
//! Every strategy here is an expand / score / select loop over segments,
//! where a segment is either one proof step or a whole proof:
//!
//! * greedy: one full proof at temperature 0;
//! * rerank: `rerank_n` sampled full proofs, best one under the value function;
//! * stepwise: a beam of `K` partial proofs, each expanded with `N` sampled
//!   next steps, pruned to the top `K` by value;
//! * stepwise++: like stepwise, but each prefix is expanded under a schedule
//!   of temperatures and the beam is the union of the top `K/l` candidates
//!   under each of `l` value weights.
//!
//! The value of a candidate is `alpha * c + (1 - alpha) * l`, where `c` is
//! the number of distinct constraint titles it mentions and `l` its
//! cumulative log-probability, each divided by its largest absolute value
//! within the candidate set.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_title, parse_mentions, Reference};
use crate::lmbackend::{BackendError, FinishReason, SampleRequest, SampleResult, Sampler, StreamKey};
use crate::promptgen::{render_inference_prompt, PromptBudgets, PromptError, PROOF_CLOSE};

/// Floor for the normalizing denominators.
pub const NORM_EPSILON: f64 = 1e-12;

/// A partial or complete proof.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub steps: Vec<String>,
    pub cum_logprob: f64,
    pub terminated: bool,
    /// Terminated by the step cap rather than by the model.
    #[serde(default)]
    pub forced: bool,
    pub covered_titles: BTreeSet<String>,
}

impl Candidate {
    pub fn new(steps: Vec<String>, cum_logprob: f64, terminated: bool, separator: &str) -> Self {
        let covered_titles = parse_mentions(&steps.join(separator))
            .iter()
            .map(|m| m.canonical_title())
            .collect();
        Candidate {
            steps,
            cum_logprob,
            terminated,
            forced: false,
            covered_titles,
        }
    }

    pub fn empty() -> Self {
        Candidate {
            steps: Vec::new(),
            cum_logprob: 0.0,
            terminated: false,
            forced: false,
            covered_titles: BTreeSet::new(),
        }
    }

    pub fn text(&self, separator: &str) -> String {
        self.steps.join(separator)
    }
}

/// Number of distinct constraint titles mentioned by the candidate.
pub fn v_constraint(candidate: &Candidate, constraint_titles: &BTreeSet<String>) -> usize {
    candidate
        .covered_titles
        .iter()
        .filter(|t| constraint_titles.contains(*t))
        .count()
}

/// Value of each candidate under weight `alpha`, normalized within the set.
pub fn score_candidates(candidates: &[Candidate], constraint_titles: &BTreeSet<String>, alpha: f64) -> Vec<f64> {
    let counts: Vec<f64> = candidates
        .iter()
        .map(|c| v_constraint(c, constraint_titles) as f64)
        .collect();
    let logprobs: Vec<f64> = candidates.iter().map(|c| c.cum_logprob).collect();
    value_scores(&counts, &logprobs, alpha)
}

/// The value formula on raw term vectors.
pub fn value_scores(counts: &[f64], logprobs: &[f64], alpha: f64) -> Vec<f64> {
    let max_abs = |xs: &[f64]| xs.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(NORM_EPSILON);
    let cmax = max_abs(counts);
    let lmax = max_abs(logprobs);
    counts
        .iter()
        .zip(logprobs)
        .map(|(c, l)| alpha * (c / cmax) + (1.0 - alpha) * (l / lmax))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Rerank,
    Stepwise,
    Stepwisepp,
}

impl DecodeMode {
    pub fn is_stepwise(self) -> bool {
        matches!(self, DecodeMode::Stepwise | DecodeMode::Stepwisepp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    /// Beam size K.
    pub beam_size: usize,
    /// Next-step samples per prefix, N.
    pub expansions: usize,
    /// `(count, temperature)` groups; counts sum to `expansions`.
    pub temperature_schedule: Vec<(usize, f64)>,
    pub alpha_clusters: Vec<f64>,
    /// Value weight used to pick the returned proof (rerank, stepwise++).
    pub final_alpha: f64,
    /// Value weight for plain stepwise search.
    pub alpha: f64,
    pub rerank_n: usize,
    pub rerank_temperature: f64,
    pub max_steps: usize,
    pub step_separator: String,
    pub budgets: PromptBudgets,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            mode: DecodeMode::Greedy,
            beam_size: 9,
            expansions: 10,
            temperature_schedule: vec![(1, 0.0), (3, 0.3), (3, 0.5), (3, 0.7)],
            alpha_clusters: vec![0.1, 0.5, 1.0],
            final_alpha: 0.75,
            alpha: 0.75,
            rerank_n: 10,
            rerank_temperature: 0.3,
            max_steps: 50,
            step_separator: crate::corpus::STEP_SEPARATOR.to_string(),
            budgets: PromptBudgets::default(),
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        let bad = |m: String| Err(DecodeError::InvalidConfig(m));
        if self.beam_size == 0 || self.expansions == 0 {
            return bad("beam size and expansions must be at least 1".into());
        }
        let total: usize = self.temperature_schedule.iter().map(|(n, _)| n).sum();
        if total != self.expansions {
            return bad(format!(
                "temperature schedule draws {total} samples but expansions is {}",
                self.expansions
            ));
        }
        if let Some((_, t)) = self
            .temperature_schedule
            .iter()
            .find(|(_, t)| !(*t >= 0.0 && t.is_finite()))
        {
            return bad(format!("temperature {t} is invalid"));
        }
        if self.alpha_clusters.is_empty() {
            return bad("at least one alpha cluster is required".into());
        }
        let alphas = self
            .alpha_clusters
            .iter()
            .chain([&self.final_alpha, &self.alpha]);
        if let Some(a) = alphas.into_iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("alpha {a} is outside [0, 1]"));
        }
        if self.rerank_n == 0 {
            return bad("rerank_n must be at least 1".into());
        }
        if !(self.rerank_temperature >= 0.0 && self.rerank_temperature.is_finite()) {
            return bad("rerank temperature is invalid".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1".into());
        }
        if self.step_separator.is_empty() {
            return bad("step separator must be non-empty".into());
        }
        self.budgets.validate()?;
        Ok(())
    }

    /// Temperature used by plain stepwise search: the schedule entry with the
    /// largest count, first one on ties.
    pub fn modal_temperature(&self) -> f64 {
        let mut best: Option<(usize, f64)> = None;
        for &(n, t) in &self.temperature_schedule {
            if best.is_none_or(|(bn, _)| n > bn) {
                best = Some((n, t));
            }
        }
        best.map(|(_, t)| t).unwrap_or(0.0)
    }

    /// Beam slots per alpha cluster (same order as `alpha_clusters`). The
    /// remainder of `K / l` goes one slot per cluster, highest alpha first.
    pub fn cluster_quotas(&self) -> Vec<usize> {
        let l = self.alpha_clusters.len();
        let mut quotas = vec![self.beam_size / l; l];
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| {
            self.alpha_clusters[b]
                .total_cmp(&self.alpha_clusters[a])
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(self.beam_size % l) {
            quotas[i] += 1;
        }
        quotas
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub text: String,
    pub cum_logprob: f64,
    pub coverage: usize,
    pub terminated: bool,
    /// Carried over from the previous beam without expansion.
    pub passed_through: bool,
    /// Value under each weight used for selection, in config order.
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Texts of the prefixes that were expanded.
    pub expanded: Vec<String>,
    pub samples: usize,
    pub candidates: Vec<ScoredCandidate>,
    /// Indices into `candidates` forming the next beam.
    pub selected: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFlags {
    /// The returned proof has no steps.
    pub degenerate: bool,
    /// Some proofs were terminated by the step cap.
    pub forced: bool,
    /// Fewer than K proofs terminated.
    pub underfilled: bool,
    /// An iteration produced no usable candidates.
    pub exhausted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub mode: DecodeMode,
    pub iterations: Vec<IterationTrace>,
    /// Sum of `token_count` over every sample drawn.
    pub generated_tokens: u64,
    /// Number of segments sampled.
    pub expansions: usize,
    pub requests: usize,
    pub flags: TraceFlags,
}

impl SearchTrace {
    fn new(mode: DecodeMode) -> Self {
        SearchTrace {
            mode,
            ..Default::default()
        }
    }

    fn record(&mut self, results: &[SampleResult]) {
        self.requests += 1;
        self.expansions += results.len();
        self.generated_tokens += results.iter().map(|r| r.token_count as u64).sum::<u64>();
    }

    /// Compact form kept in reports.
    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            mode: self.mode,
            iterations: self.iterations.len(),
            expansions: self.expansions,
            requests: self.requests,
            generated_tokens: self.generated_tokens,
            flags: self.flags.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub mode: DecodeMode,
    pub iterations: usize,
    pub expansions: usize,
    pub requests: usize,
    pub generated_tokens: u64,
    pub flags: TraceFlags,
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend failed: {source}")]
    Backend {
        #[source]
        source: BackendError,
        trace: Box<SearchTrace>,
    },
    #[error("no viable proof")]
    NoViableProof { trace: Box<SearchTrace> },
}

impl DecodeError {
    pub fn trace(&self) -> Option<&SearchTrace> {
        match self {
            DecodeError::Backend { trace, .. } | DecodeError::NoViableProof { trace } => Some(trace),
            _ => None,
        }
    }
}

/// What to prove and which titles to put in the prompt and enforce.
#[derive(Clone, Copy, Debug)]
pub struct DecodeProblem<'a> {
    pub theorem: &'a Reference,
    /// Titles in prompt order; also the constraint set.
    pub ref_titles: &'a [String],
    /// Mixed into every stream key so distinct requests draw distinct samples.
    pub salt: u64,
}

impl DecodeProblem<'_> {
    pub fn constraint_set(&self) -> BTreeSet<String> {
        self.ref_titles.iter().map(|t| normalize_title(t)).collect()
    }
}

/// Runs the strategy selected by `config.mode`.
pub fn decode(
    problem: &DecodeProblem<'_>,
    backend: &dyn Sampler,
    config: &DecodeConfig,
) -> Result<(Candidate, SearchTrace), DecodeError> {
    match config.mode {
        DecodeMode::Greedy => decode_greedy(problem, backend, config),
        DecodeMode::Rerank => decode_rerank(problem, backend, config),
        DecodeMode::Stepwise => decode_stepwise(problem, backend, config, config.alpha),
        DecodeMode::Stepwisepp => decode_stepwisepp(problem, backend, config),
    }
}

fn full_proof_prompt(problem: &DecodeProblem<'_>, backend: &dyn Sampler, config: &DecodeConfig) -> Result<String, DecodeError> {
    let counter = |s: &str| backend.count_tokens(s);
    Ok(render_inference_prompt::<String>(
        problem.theorem,
        problem.ref_titles,
        None,
        &config.budgets,
        &counter,
    )?)
}

/// Splits a sampled full proof into steps.
fn full_proof_steps(text: &str, separator: &str) -> Vec<String> {
    let body = match text.find(PROOF_CLOSE) {
        Some(pos) => &text[..pos],
        None => text,
    };
    body.split(separator)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn sample_full_proofs(
    problem: &DecodeProblem<'_>,
    backend: &dyn Sampler,
    config: &DecodeConfig,
    temperature: f64,
    n: usize,
    trace: &mut SearchTrace,
) -> Result<Vec<Candidate>, DecodeError> {
    let prompt = full_proof_prompt(problem, backend, config)?;
    let request = SampleRequest::new(prompt, temperature, n, config.budgets.max_full_proof_tokens)
        .with_stop([PROOF_CLOSE])
        .with_stream(StreamKey {
            salt: problem.salt,
            ..Default::default()
        });
    let results = match backend.sample(&request) {
        Ok(r) => r,
        Err(source) => {
            return Err(DecodeError::Backend {
                source,
                trace: Box::new(trace.clone()),
            })
        }
    };
    trace.record(&results);
    Ok(results
        .iter()
        .map(|r| {
            Candidate::new(
                full_proof_steps(&r.text, &config.step_separator),
                r.logprob,
                true,
                &config.step_separator,
            )
        })
        .collect())
}

fn scored(candidates: &[Candidate], constraints: &BTreeSet<String>, alphas: &[f64], sep: &str, passed: &[bool]) -> Vec<ScoredCandidate> {
    let per_alpha: Vec<Vec<f64>> = alphas
        .iter()
        .map(|&a| score_candidates(candidates, constraints, a))
        .collect();
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| ScoredCandidate {
            text: c.text(sep),
            cum_logprob: c.cum_logprob,
            coverage: v_constraint(c, constraints),
            terminated: c.terminated,
            passed_through: passed.get(i).copied().unwrap_or(false),
            scores: per_alpha.iter().map(|s| s[i]).collect(),
        })
        .collect()
}

/// Indices of `candidates` ordered best-first by
/// (value desc, cum_logprob desc, text asc).
fn ranking(candidates: &[Candidate], values: &[f64], sep: &str) -> Vec<usize> {
    let texts: Vec<String> = candidates.iter().map(|c| c.text(sep)).collect();
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then(candidates[b].cum_logprob.total_cmp(&candidates[a].cum_logprob))
            .then_with(|| texts[a].cmp(&texts[b]))
    });
    idx
}

fn best_index(candidates: &[Candidate], constraints: &BTreeSet<String>, alpha: f64, sep: &str) -> usize {
    let values = score_candidates(candidates, constraints, alpha);
    ranking(candidates, &values, sep)[0]
}

/// One temperature-0 full proof.
pub fn decode_greedy(
    problem: &DecodeProblem<'_>,
    backend: &dyn Sampler,
    config: &DecodeConfig,
) -> Result<(Candidate, SearchTrace), DecodeError> {
    config.validate()?;
    let mut trace = SearchTrace::new(DecodeMode::Greedy);
    let mut cands = sample_full_proofs(problem, backend, config, 0.0, 1, &mut trace)?;
    let best = cands.remove(0);
    trace.flags.degenerate = best.steps.is_empty();
    let constraints = problem.constraint_set();
    trace.iterations.push(IterationTrace {
        iteration: 0,
        expanded: vec![String::new()],
        samples: 1,
        candidates: scored(std::slice::from_ref(&best), &constraints, &[config.final_alpha], &config.step_separator, &[]),
        selected: vec![0],
    });
    Ok((best, trace))
}

/// `rerank_n` sampled full proofs; the best under `final_alpha` wins.
pub fn decode_rerank(
    problem: &DecodeProblem<'_>,
    backend: &dyn Sampler,
    config: &DecodeConfig,
) -> Result<(Candidate, SearchTrace), DecodeError> {
    config.validate()?;
    let mut trace = SearchTrace::new(DecodeMode::Rerank);
    let sampled = sample_full_proofs(problem, backend, config, config.rerank_temperature, config.rerank_n, &mut trace)?;
    let viable: Vec<Candidate> = sampled.into_iter().filter(|c| !c.steps.is_empty()).collect();
    if viable.is_empty() {
        trace.flags.degenerate = true;
        return Err(DecodeError::NoViableProof { trace: Box::new(trace) });
    }
    let constraints = problem.constraint_set();
    let best = best_index(&viable, &constraints, config.final_alpha, &config.step_separator);
    trace.iterations.push(IterationTrace {
        iteration: 0,
        expanded: vec![String::new()],
        samples: config.rerank_n,
        candidates: scored(&viable, &constraints, &[config.final_alpha], &config.step_separator, &[]),
        selected: vec![best],
    });
    Ok((viable[best].clone(), trace))
}

/// How one stepwise search expands and selects.
struct BeamPolicy<'a> {
    schedule: Vec<(usize, f64)>,
    /// `(alpha, quota)` per cluster.
    clusters: Vec<(f64, usize)>,
    final_alpha: f64,
    mode: DecodeMode,
    config: &'a DecodeConfig,
}

/// Stepwise stochastic beam search at a single weight `alpha`.
pub fn decode_stepwise(
    problem: &DecodeProblem<'_>,
    backend: &dyn Sampler,
    config: &DecodeConfig,
    alpha: f64,
) -> Result<(Candidate, SearchTrace), DecodeError> {
    config.validate()?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DecodeError::InvalidConfig(format!("alpha {alpha} is outside [0, 1]")));
    }
    let policy = BeamPolicy {
        schedule: vec![(config.expansions, config.modal_temperature())],
        clusters: vec![(alpha, config.beam_size)],
        final_alpha: alpha,
        mode: DecodeMode::Stepwise,
        config,
    };
    beam_search(problem, backend, &policy)
}

/// Stepwise search with multi-temperature expansion and per-weight clusters.
pub fn decode_stepwisepp(
    problem: &DecodeProblem<'_>,
    backend: &dyn Sampler,
    config: &DecodeConfig,
) -> Result<(Candidate, SearchTrace), DecodeError> {
    config.validate()?;
    let policy = BeamPolicy {
        schedule: config.temperature_schedule.clone(),
        clusters: config
            .alpha_clusters
            .iter()
            .copied()
            .zip(config.cluster_quotas())
            .collect(),
        final_alpha: config.final_alpha,
        mode: DecodeMode::Stepwisepp,
        config,
    };
    beam_search(problem, backend, &policy)
}

/// Turns one sampled step into a child of `prefix`. Returns `None` for an
/// empty step that does not end the proof.
fn extend(prefix: &Candidate, result: &SampleResult, sep: &str) -> Option<Candidate> {
    let (body, closed) = match result.text.find(PROOF_CLOSE) {
        Some(pos) => (&result.text[..pos], true),
        None => (result.text.as_str(), false),
    };
    let terminated = closed || result.truncated_by == FinishReason::End;
    let step = body.trim();
    if step.is_empty() && !terminated {
        return None;
    }
    let mut steps = prefix.steps.clone();
    if !step.is_empty() {
        steps.push(step.to_string());
    }
    Some(Candidate::new(steps, prefix.cum_logprob + result.logprob, terminated, sep))
}

/// Merges candidates with identical text and status, keeping the highest
/// log-probability at the position of the first occurrence.
fn dedup(pool: Vec<(Candidate, bool)>, sep: &str) -> Vec<(Candidate, bool)> {
    let mut out: Vec<(Candidate, bool)> = Vec::with_capacity(pool.len());
    let mut index: HashMap<(String, bool), usize> = HashMap::new();
    for (c, passed) in pool {
        let key = (c.text(sep), c.terminated);
        match index.get(&key) {
            Some(&i) => {
                if c.cum_logprob > out[i].0.cum_logprob {
                    out[i] = (c, passed);
                }
            }
            None => {
                index.insert(key, out.len());
                out.push((c, passed));
            }
        }
    }
    out
}

fn beam_search(
    problem: &DecodeProblem<'_>,
    backend: &dyn Sampler,
    policy: &BeamPolicy<'_>,
) -> Result<(Candidate, SearchTrace), DecodeError> {
    let config = policy.config;
    let sep = config.step_separator.as_str();
    let constraints = problem.constraint_set();
    let alphas: Vec<f64> = policy.clusters.iter().map(|(a, _)| *a).collect();
    let counter = |s: &str| backend.count_tokens(s);

    let mut trace = SearchTrace::new(policy.mode);
    let mut beam = vec![Candidate::empty()];
    let mut archive: Vec<Candidate> = Vec::new();

    for iteration in 0..config.max_steps {
        if beam.iter().all(|c| c.terminated) {
            break;
        }

        let mut jobs = Vec::new();
        for (bi, cand) in beam.iter().enumerate().filter(|(_, c)| !c.terminated) {
            let prompt = render_inference_prompt(
                problem.theorem,
                problem.ref_titles,
                Some(&cand.steps[..]),
                &config.budgets,
                &counter,
            )?;
            for (gi, &(n, temperature)) in policy.schedule.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                let request = SampleRequest::new(prompt.clone(), temperature, n, config.budgets.max_step_tokens)
                    .with_stop([sep])
                    .with_stream(StreamKey {
                        salt: problem.salt,
                        iteration: iteration as u64,
                        beam: bi as u64,
                        group: gi as u64,
                    });
                jobs.push((bi, request));
            }
        }
        let outcomes: Vec<(usize, Result<Vec<SampleResult>, BackendError>)> = jobs
            .par_iter()
            .map(|(bi, req)| (*bi, backend.sample(req)))
            .collect();

        let mut pool: Vec<(Candidate, bool)> = beam
            .iter()
            .filter(|c| c.terminated)
            .map(|c| (c.clone(), true))
            .collect();
        let mut samples = 0;
        for (bi, outcome) in outcomes {
            let results = match outcome {
                Ok(r) => r,
                Err(source) => {
                    return Err(DecodeError::Backend {
                        source,
                        trace: Box::new(trace),
                    })
                }
            };
            trace.record(&results);
            samples += results.len();
            pool.extend(results.iter().filter_map(|r| extend(&beam[bi], r, sep)).map(|c| (c, false)));
        }
        let expanded: Vec<String> = beam
            .iter()
            .filter(|c| !c.terminated)
            .map(|c| c.text(sep))
            .collect();

        let pool = dedup(pool, sep);
        if pool.is_empty() {
            trace.flags.exhausted = true;
            trace.iterations.push(IterationTrace {
                iteration,
                expanded,
                samples,
                ..Default::default()
            });
            beam.clear();
            break;
        }
        let (cands, passed): (Vec<Candidate>, Vec<bool>) = pool.into_iter().unzip();

        let mut selected: Vec<usize> = Vec::new();
        for &(alpha, quota) in &policy.clusters {
            let values = score_candidates(&cands, &constraints, alpha);
            for i in ranking(&cands, &values, sep).into_iter().take(quota) {
                if !selected.contains(&i) {
                    selected.push(i);
                }
            }
        }
        trace.iterations.push(IterationTrace {
            iteration,
            expanded,
            samples,
            candidates: scored(&cands, &constraints, &alphas, sep, &passed),
            selected: selected.clone(),
        });
        beam = selected.iter().map(|&i| cands[i].clone()).collect();
        archive.extend(beam.iter().filter(|c| c.terminated).cloned());
    }

    if beam.iter().any(|c| !c.terminated) {
        trace.flags.forced = true;
        for c in beam.iter_mut().filter(|c| !c.terminated) {
            c.terminated = true;
            c.forced = true;
        }
    }

    let finished: Vec<Candidate> = if beam.is_empty() { archive } else { beam };
    if finished.is_empty() {
        return Err(DecodeError::NoViableProof { trace: Box::new(trace) });
    }
    trace.flags.underfilled = finished.len() < config.beam_size;
    let best = best_index(&finished, &constraints, policy.final_alpha, sep);
    let best = finished[best].clone();
    trace.flags.degenerate = best.steps.is_empty();
    Ok((best, trace))
}
