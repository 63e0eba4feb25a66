//! Serialized training records and inference prompts.
//!
//! Proof examples look like
//!
//! ```text
//! <theorem> <title> T </title> <content> C </content> </theorem> <ref> A </ref> <ref> B </ref> <proof>
//! ```
//!
//! followed by the completion ` step 1\n\nstep 2 </proof>`. Reconstruction
//! records are `<definition> <title> T </title> <content>` with completion
//! ` C </content> </definition>`. Tags are separated by single spaces and
//! empty slots are skipped.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ProofDocument, RefKind, Reference, Split, STEP_SEPARATOR};

pub const PROOF_OPEN: &str = "<proof>";
pub const PROOF_CLOSE: &str = "</proof>";

/// Number of retrieved titles placed in a prompt.
pub const RETRIEVED_TOP_K: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudgets {
    pub max_prompt_tokens: usize,
    pub max_full_proof_tokens: usize,
    pub max_history_tokens: usize,
    pub max_step_tokens: usize,
}

impl Default for PromptBudgets {
    fn default() -> Self {
        PromptBudgets {
            max_prompt_tokens: 1024,
            max_full_proof_tokens: 1020,
            max_history_tokens: 900,
            max_step_tokens: 120,
        }
    }
}

impl PromptBudgets {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.max_prompt_tokens == 0
            || self.max_full_proof_tokens == 0
            || self.max_history_tokens == 0
            || self.max_step_tokens == 0
        {
            return Err(PromptError::InvalidBudgets);
        }
        Ok(())
    }
}

/// Which reference titles a model is conditioned on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeSetting {
    #[default]
    None,
    Retrieved,
    Provided,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    #[default]
    ProofExample,
    Reconstruction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub prompt: String,
    pub completion: String,
    /// Not written to fine-tuning files.
    #[serde(skip)]
    pub record_kind: RecordKind,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("theorem {title:?} does not fit in {budget} prompt tokens even without content or references")]
    TitleExceedsBudget { title: String, budget: usize },
    #[error("every prompt budget must be positive")]
    InvalidBudgets,
    #[error("no retrievals for training theorems {0:?}")]
    MissingRetrievals(Vec<u64>),
    #[error("the retrieved setting needs a retrievals map")]
    RetrievalsRequired,
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn join_slots<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    parts
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn content_text(reference: &Reference) -> String {
    reference.content.join("\n")
}

fn theorem_block(title: &str, content: &str) -> String {
    join_slots([
        "<theorem>",
        "<title>",
        title,
        "</title>",
        "<content>",
        content,
        "</content>",
        "</theorem>",
    ])
}

fn proof_prompt(title: &str, content: &str, ref_titles: &[String]) -> String {
    let mut out = theorem_block(title, content);
    for t in ref_titles {
        out.push_str(" <ref> ");
        out.push_str(t);
        out.push_str(" </ref>");
    }
    out.push(' ');
    out.push_str(PROOF_OPEN);
    out
}

/// Serializes proof steps with [`STEP_SEPARATOR`].
pub fn serialize_steps<S: AsRef<str>>(steps: &[S]) -> String {
    steps
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(STEP_SEPARATOR)
}

/// Training record for (theorem, reference titles, proof). The loss boundary
/// is right after `<proof>`.
pub fn render_proof_example(theorem: &Reference, ref_titles: &[String], proof: &ProofDocument) -> FinetuneRecord {
    let prompt = proof_prompt(&theorem.title, &content_text(theorem), ref_titles);
    let completion = format!(" {}", join_slots([proof.serialize().as_str(), PROOF_CLOSE]));
    FinetuneRecord {
        prompt,
        completion,
        record_kind: RecordKind::ProofExample,
    }
}

/// Training record mapping a reference title to its content. The loss
/// boundary is right after `<content>`.
pub fn render_reconstruction(reference: &Reference) -> FinetuneRecord {
    let kind = reference.kind.as_str();
    let open = format!("<{kind}>");
    let close = format!("</{kind}>");
    let prompt = join_slots([open.as_str(), "<title>", reference.title.as_str(), "</title>", "<content>"]);
    let content = content_text(reference);
    let completion = format!(" {}", join_slots([content.as_str(), "</content>", close.as_str()]));
    FinetuneRecord {
        prompt,
        completion,
        record_kind: RecordKind::Reconstruction,
    }
}

/// Fields recovered from a serialized proof example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedProofExample {
    pub title: String,
    pub content: String,
    pub ref_titles: Vec<String>,
    pub proof: String,
}

/// Fields recovered from a serialized reconstruction record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedReconstruction {
    pub kind: RefKind,
    pub title: String,
    pub content: String,
}

/// Takes `open`, then an optional slot, then `close` off the front of `s`.
fn take_slot<'a>(s: &'a str, open: &str, close: &str) -> Option<(&'a str, &'a str)> {
    let rest = s.strip_prefix(open)?;
    if let Some(after) = rest.strip_prefix(' ').and_then(|r| r.strip_prefix(close)) {
        return Some(("", after));
    }
    let rest = rest.strip_prefix(' ')?;
    let end = rest.find(&format!(" {close}"))?;
    Some((&rest[..end], &rest[end + 1 + close.len()..]))
}

/// Inverse of [`render_proof_example`] on `prompt + completion`.
pub fn parse_proof_example(text: &str) -> Option<ParsedProofExample> {
    let rest = text.strip_prefix("<theorem> ")?;
    let (title, rest) = take_slot(rest, "<title>", "</title>")?;
    let rest = rest.strip_prefix(' ')?;
    let (content, rest) = take_slot(rest, "<content>", "</content>")?;
    let mut rest = rest.strip_prefix(" </theorem> ")?;
    let mut ref_titles = Vec::new();
    while rest.starts_with("<ref>") {
        let (t, r) = take_slot(rest, "<ref>", "</ref>")?;
        ref_titles.push(t.to_string());
        rest = r.strip_prefix(' ')?;
    }
    let body = rest.strip_prefix(PROOF_OPEN)?.strip_suffix(PROOF_CLOSE)?;
    let proof = body.strip_prefix(' ').unwrap_or(body);
    let proof = proof.strip_suffix(' ').unwrap_or(proof);
    Some(ParsedProofExample {
        title: title.to_string(),
        content: content.to_string(),
        ref_titles,
        proof: proof.to_string(),
    })
}

/// Inverse of [`render_reconstruction`] on `prompt + completion`.
pub fn parse_reconstruction(text: &str) -> Option<ParsedReconstruction> {
    let open_end = text.find('>')?;
    let kind: RefKind = text.get(1..open_end)?.parse().ok()?;
    let rest = text.strip_prefix(&format!("<{kind}> "))?;
    let (title, rest) = take_slot(rest, "<title>", "</title>")?;
    let rest = rest.strip_prefix(' ')?;
    let (content, rest) = take_slot(rest, "<content>", "</content>")?;
    if rest != format!(" </{kind}>") {
        return None;
    }
    Some(ParsedReconstruction {
        kind,
        title: title.to_string(),
        content: content.to_string(),
    })
}

/// Longest word-prefix of `text` (cut at a whitespace boundary) whose
/// rendering passes `fits`. Assumes token counts grow with the prefix.
fn longest_fitting_prefix<'a>(text: &'a str, fits: impl Fn(&str) -> bool) -> &'a str {
    let ends: Vec<usize> = text
        .split_whitespace()
        .map(|w| w.as_ptr() as usize - text.as_ptr() as usize + w.len())
        .collect();
    let (mut lo, mut hi) = (0usize, ends.len());
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if fits(&text[..ends[mid - 1]]) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    if lo == 0 {
        ""
    } else {
        &text[..ends[lo - 1]]
    }
}

/// Builds the prompt used at inference time.
///
/// The part up to `<proof>` is cut to `max_prompt_tokens` from the tail:
/// reference titles are dropped last-first, then theorem content is cut word
/// by word from its end. The history keeps the most recent whole steps whose
/// serialization fits `max_history_tokens`; when history is present the
/// prompt ends with a step separator so the model continues with a new step.
pub fn render_inference_prompt<S: AsRef<str>>(
    theorem: &Reference,
    ref_titles: &[String],
    proof_so_far: Option<&[S]>,
    budgets: &PromptBudgets,
    count_tokens: &dyn Fn(&str) -> usize,
) -> Result<String, PromptError> {
    let budget = budgets.max_prompt_tokens;
    let fits = |s: &str| count_tokens(s) <= budget;
    let content = content_text(theorem);

    let mut prompt = None;
    for keep in (0..=ref_titles.len()).rev() {
        let candidate = proof_prompt(&theorem.title, &content, &ref_titles[..keep]);
        if fits(&candidate) {
            prompt = Some(candidate);
            break;
        }
    }
    let mut prompt = match prompt {
        Some(p) => p,
        None => {
            let cut = longest_fitting_prefix(&content, |c| fits(&proof_prompt(&theorem.title, c, &[])));
            let candidate = proof_prompt(&theorem.title, cut, &[]);
            if !fits(&candidate) {
                return Err(PromptError::TitleExceedsBudget {
                    title: theorem.title.clone(),
                    budget,
                });
            }
            candidate
        }
    };

    if let Some(history) = proof_so_far {
        let kept = truncate_history(history, budgets.max_history_tokens, count_tokens);
        if !kept.is_empty() {
            prompt.push(' ');
            prompt.push_str(&serialize_steps(kept));
            prompt.push_str(STEP_SEPARATOR);
        }
    }
    Ok(prompt)
}

/// Most recent steps whose serialization fits `max_tokens`; older steps are
/// dropped whole.
pub fn truncate_history<'a, S: AsRef<str>>(
    history: &'a [S],
    max_tokens: usize,
    count_tokens: &dyn Fn(&str) -> usize,
) -> &'a [S] {
    let mut start = 0;
    while start < history.len() && count_tokens(&serialize_steps(&history[start..])) > max_tokens {
        start += 1;
    }
    &history[start..]
}

/// Builds all fine-tuning records for the training split.
///
/// `none` yields one title-free proof example per training example.
/// `provided` and `retrieved` add gold (first-mention order) or top-20
/// retrieved titles and one reconstruction record per training reference.
pub fn finetune_records(
    corpus: &Corpus,
    setting: KnowledgeSetting,
    retrievals: Option<&BTreeMap<u64, Vec<String>>>,
) -> Result<Vec<FinetuneRecord>, PromptError> {
    let train: Vec<_> = corpus.examples_in(Split::Train).collect();
    if setting == KnowledgeSetting::Retrieved {
        let r = retrievals.ok_or(PromptError::RetrievalsRequired)?;
        let mut missing: Vec<u64> = train
            .iter()
            .map(|e| e.theorem_id)
            .filter(|id| !r.contains_key(id))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            return Err(PromptError::MissingRetrievals(missing));
        }
    }

    let mut records = Vec::new();
    for ex in &train {
        let theorem = corpus
            .reference_by_id(ex.theorem_id)
            .expect("corpus invariant: example theorems resolve");
        let titles = match setting {
            KnowledgeSetting::None => Vec::new(),
            KnowledgeSetting::Provided => ex.proof.ordered_ref_titles(),
            KnowledgeSetting::Retrieved => retrievals
                .and_then(|r| r.get(&ex.theorem_id))
                .map(|t| t.iter().take(RETRIEVED_TOP_K).cloned().collect())
                .unwrap_or_default(),
        };
        records.push(render_proof_example(theorem, &titles, &ex.proof));
    }
    if setting != KnowledgeSetting::None {
        records.extend(corpus.train_references().into_iter().map(render_reconstruction));
    }
    Ok(records)
}

/// Writes [`finetune_records`] as JSON-lines of `{"prompt", "completion"}`
/// and returns the record count.
pub fn emit_finetune_file(
    corpus: &Corpus,
    setting: KnowledgeSetting,
    retrievals: Option<&BTreeMap<u64, Vec<String>>>,
    out: &Path,
) -> Result<usize, PromptError> {
    let records = finetune_records(corpus, setting, retrievals)?;
    let io_err = |source| PromptError::Io {
        path: out.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(out).map_err(io_err)?);
    for r in &records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(records.len())
}
