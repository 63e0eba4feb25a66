//! Automatic proof metrics.
//!
//! Text metrics work on normalized whitespace tokens; reference metrics work
//! on sets of canonical titles.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize, Corpus, ProofDocument};

pub const GLEU_MAX_N: usize = 4;

/// Normalized whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text).split_whitespace().map(str::to_string).collect()
}

fn ngram_counts<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence GLEU over n-grams of order 1 to 4.
///
/// Returns `min(matches / hyp_ngrams, matches / ref_ngrams)` where counts
/// are clipped and summed over all orders. An empty hypothesis scores 0
/// unless the reference is empty too, which scores 1.
pub fn gleu(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() {
        return if reference.is_empty() { 1.0 } else { 0.0 };
    }
    if reference.is_empty() {
        return 0.0;
    }
    let (mut matches, mut hyp_total, mut ref_total) = (0usize, 0usize, 0usize);
    for n in 1..=GLEU_MAX_N {
        let h = ngram_counts(hypothesis, n);
        let r = ngram_counts(reference, n);
        hyp_total += hypothesis.len().saturating_sub(n - 1);
        ref_total += reference.len().saturating_sub(n - 1);
        matches += h
            .iter()
            .map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0)))
            .sum::<usize>();
    }
    if hyp_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let precision = matches as f64 / hyp_total as f64;
    let recall = matches as f64 / ref_total as f64;
    precision.min(recall)
}

/// Bag-of-tokens F1 with clipped overlap. Two empty inputs score 1.
pub fn token_f1(hypothesis: &[String], reference: &[String]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return if hypothesis.is_empty() && reference.is_empty() { 1.0 } else { 0.0 };
    }
    let r = ngram_counts(reference, 1);
    let overlap: usize = ngram_counts(hypothesis, 1)
        .iter()
        .map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hypothesis.len() as f64;
    let rc = overlap as f64 / reference.len() as f64;
    2.0 * p * rc / (p + rc)
}

/// Precision, recall and F1 of `generated` against `gold`.
///
/// Two empty sets score `(1, 1, 1)`. Otherwise an empty side contributes a
/// ratio of 0, and F1 is 0 whenever precision and recall are both 0.
pub fn ref_prf(generated: &BTreeSet<String>, gold: &BTreeSet<String>) -> (f64, f64, f64) {
    if generated.is_empty() && gold.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let hit = generated.intersection(gold).count() as f64;
    let ratio = |n: usize| if n == 0 { 0.0 } else { hit / n as f64 };
    let (p, r) = (ratio(generated.len()), ratio(gold.len()));
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Tokens of the gold-mentioned reference pages, each page once, in title
/// order. Titles that resolve to no page are skipped.
pub fn knowledge_tokens(gold_titles: &BTreeSet<String>, corpus: &Corpus) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for title in gold_titles {
        if let Some(r) = corpus.resolve(title) {
            if seen.insert(r.id) {
                out.extend(tokenize(&r.content.join("\n")));
            }
        }
    }
    out
}

/// Token F1 between the hypothesis and the contents of the gold-mentioned
/// reference pages.
pub fn kf1(hypothesis: &[String], gold_titles: &BTreeSet<String>, corpus: &Corpus) -> f64 {
    token_f1(hypothesis, &knowledge_tokens(gold_titles, corpus))
}

/// Fraction of generated titles that resolve to no corpus reference. Zero
/// when nothing was generated.
pub fn halluc_rate(generated: &BTreeSet<String>, corpus: &Corpus) -> f64 {
    if generated.is_empty() {
        return 0.0;
    }
    let missing = generated.iter().filter(|t| corpus.resolve(t).is_none()).count();
    missing as f64 / generated.len() as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub gleu: f64,
    pub token_f1: f64,
    pub kf1: f64,
    pub ref_precision: f64,
    pub ref_recall: f64,
    pub ref_f1: f64,
    pub halluc: f64,
}

impl MetricReport {
    pub const NAMES: [&'static str; 7] = ["gleu", "token_f1", "kf1", "ref_precision", "ref_recall", "ref_f1", "halluc"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.gleu,
            self.token_f1,
            self.kf1,
            self.ref_precision,
            self.ref_recall,
            self.ref_f1,
            self.halluc,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES.iter().position(|n| *n == name).map(|i| self.values()[i])
    }

    /// Sum of all metrics with hallucination negated.
    pub fn combined(&self) -> f64 {
        self.gleu + self.token_f1 + self.kf1 + self.ref_precision + self.ref_recall + self.ref_f1 - self.halluc
    }

    /// Element-wise mean; `None` for an empty slice.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mut sums = [0.0; 7];
        for r in reports {
            for (s, v) in sums.iter_mut().zip(r.values()) {
                *s += v;
            }
        }
        let m = sums.map(|s| s / n);
        Some(MetricReport {
            gleu: m[0],
            token_f1: m[1],
            kf1: m[2],
            ref_precision: m[3],
            ref_recall: m[4],
            ref_f1: m[5],
            halluc: m[6],
        })
    }
}

/// Scores a generated proof against the gold proof.
pub fn score_proof(generated: &ProofDocument, gold: &ProofDocument, corpus: &Corpus) -> MetricReport {
    let hyp = tokenize(&generated.serialize());
    let reference = tokenize(&gold.serialize());
    let (p, r, f) = ref_prf(&generated.ref_titles, &gold.ref_titles);
    MetricReport {
        gleu: gleu(&hyp, &reference),
        token_f1: token_f1(&hyp, &reference),
        kf1: kf1(&hyp, &gold.ref_titles, corpus),
        ref_precision: p,
        ref_recall: r,
        ref_f1: f,
        halluc: halluc_rate(&generated.ref_titles, corpus),
    }
}

/// Index of the best report by [`MetricReport::combined`], lowest index on
/// ties. `None` for an empty slice.
pub fn best_of_k(reports: &[MetricReport]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in reports.iter().enumerate() {
        let v = r.combined();
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Error, PartialEq)]
pub enum CorrelationError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("a series has zero variance")]
    ZeroVariance,
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, CorrelationError> {
    if xs.len() != ys.len() {
        return Err(CorrelationError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(CorrelationError::TooFewPoints(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CorrelationError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn gleu_identity_and_empty() {
        let a = toks("the cat sat on the mat");
        assert_eq!(gleu(&a, &a), 1.0);
        assert_eq!(gleu(&[], &a), 0.0);
        assert_eq!(gleu(&[], &[]), 1.0);
        assert_eq!(gleu(&a, &[]), 0.0);
    }

    #[test]
    fn gleu_short_sequences() {
        // hyp "a b", ref "a b c": matches 2 + 1, hyp total 2 + 1, ref total 3 + 2 + 1
        let g = gleu(&toks("a b"), &toks("a b c"));
        assert!((g - 0.5).abs() < 1e-15);
    }

    #[test]
    fn token_f1_counts_multiplicity() {
        let f = token_f1(&toks("a a b"), &toks("a b b"));
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ref_prf_fixture() {
        let (p, r, f) = ref_prf(&set(&["A", "B"]), &set(&["A", "B", "C"]));
        assert!((p - 1.0).abs() < 1e-12);
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert!((f - 0.8).abs() < 1e-12);
        assert_eq!(ref_prf(&set(&[]), &set(&[])), (1.0, 1.0, 1.0));
        assert_eq!(ref_prf(&set(&[]), &set(&["A"])), (0.0, 0.0, 0.0));
        assert_eq!(ref_prf(&set(&["A"]), &set(&[])), (0.0, 0.0, 0.0));
        assert_eq!(ref_prf(&set(&["A"]), &set(&["B"])), (0.0, 0.0, 0.0));
    }

    #[test]
    fn best_of_k_prefers_lowest_index_on_ties() {
        let a = MetricReport { gleu: 0.5, ..Default::default() };
        let b = MetricReport { gleu: 0.7, halluc: 0.2, ..Default::default() };
        assert_eq!(best_of_k(&[a.clone(), b]), Some(0));
        assert_eq!(best_of_k(&[]), None);
    }

    #[test]
    fn pearson_basic() {
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(CorrelationError::ZeroVariance));
    }
}
