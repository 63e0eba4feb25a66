//! Deterministic scripted language model.
//!
//! A script maps prompt suffixes to weighted continuation tables. Generation
//! repeatedly picks the table whose suffix is the longest match for
//! `prompt + text so far`, draws one continuation and appends it, until a
//! stop sequence, the token limit, or a continuation marked `end`.
//!
//! The log-probability of a continuation is `ln(w_i / sum w)` under the
//! untempered table. Temperature only reshapes the sampling distribution
//! (`p_i^(1/tau)`, renormalized); `tau = 0` takes the heaviest entry with
//! ties broken by the lexicographically smallest text.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{whitespace_tokens, BackendError, CostMeter, FinishReason, SampleRequest, SampleResult, Sampler, Usage};

/// Upper bound on draws per sample, so a cyclic script cannot spin forever.
const MAX_DRAWS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Continuation {
    pub text: String,
    pub weight: f64,
    /// The model stops after emitting this text.
    #[serde(default)]
    pub end: bool,
}

impl Continuation {
    pub fn new(text: impl Into<String>, weight: f64) -> Self {
        Continuation {
            text: text.into(),
            weight,
            end: false,
        }
    }

    pub fn ending(text: impl Into<String>, weight: f64) -> Self {
        Continuation {
            text: text.into(),
            weight,
            end: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub suffix: String,
    pub continuations: Vec<Continuation>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<ScriptRule>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, suffix: impl Into<String>, continuations: Vec<Continuation>) -> Self {
        self.rules.push(ScriptRule {
            suffix: suffix.into(),
            continuations,
        });
        self
    }
}

#[derive(Debug)]
struct Table {
    suffix: String,
    texts: Vec<String>,
    ends: Vec<bool>,
    logprobs: Vec<f64>,
}

#[derive(Debug)]
pub struct MockBackend {
    tables: Vec<Table>,
    seed: u64,
    meter: CostMeter,
}

/// Validates a script and builds a mock backend.
pub fn configure_mock(script: &MockScript, seed: u64) -> Result<MockBackend, BackendError> {
    let mut tables: Vec<Table> = Vec::with_capacity(script.rules.len());
    for rule in &script.rules {
        if rule.continuations.is_empty() {
            return Err(BackendError::InvalidScript(format!(
                "rule {:?} has no continuations",
                rule.suffix
            )));
        }
        if tables.iter().any(|t| t.suffix == rule.suffix) {
            return Err(BackendError::InvalidScript(format!("duplicate suffix {:?}", rule.suffix)));
        }
        if let Some(bad) = rule
            .continuations
            .iter()
            .find(|c| !(c.weight > 0.0 && c.weight.is_finite()))
        {
            return Err(BackendError::InvalidScript(format!(
                "weight {} for {:?} is not positive",
                bad.weight, bad.text
            )));
        }
        let total: f64 = rule.continuations.iter().map(|c| c.weight).sum();
        tables.push(Table {
            suffix: rule.suffix.clone(),
            texts: rule.continuations.iter().map(|c| c.text.clone()).collect(),
            ends: rule.continuations.iter().map(|c| c.end).collect(),
            logprobs: rule.continuations.iter().map(|c| (c.weight / total).ln()).collect(),
        });
    }
    Ok(MockBackend {
        tables,
        seed,
        meter: CostMeter::default(),
    })
}

fn ends_with_concat(head: &str, tail: &str, suffix: &str) -> bool {
    let (h, t, s) = (head.as_bytes(), tail.as_bytes(), suffix.as_bytes());
    if s.len() <= t.len() {
        t.ends_with(s)
    } else {
        let k = s.len() - t.len();
        s[k..] == *t && h.ends_with(&s[..k])
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243F_6A88_85A3_08D3, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Byte offset just past the `n`-th whitespace-delimited token.
fn end_of_token(text: &str, n: usize) -> usize {
    text.split_whitespace()
        .nth(n - 1)
        .map(|w| w.as_ptr() as usize - text.as_ptr() as usize + w.len())
        .unwrap_or(text.len())
}

impl Table {
    fn choose(&self, temperature: f64, rng: &mut ChaCha8Rng) -> usize {
        if temperature == 0.0 {
            let mut best = 0;
            for i in 1..self.texts.len() {
                let better = self.logprobs[i] > self.logprobs[best]
                    || (self.logprobs[i] == self.logprobs[best] && self.texts[i] < self.texts[best]);
                if better {
                    best = i;
                }
            }
            return best;
        }
        let scaled: Vec<f64> = self.logprobs.iter().map(|l| l / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut r = rng.random::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            if r < *w {
                return i;
            }
            r -= w;
        }
        weights.len() - 1
    }
}

impl MockBackend {
    fn lookup(&self, prompt: &str, generated: &str) -> Option<&Table> {
        self.tables
            .iter()
            .filter(|t| ends_with_concat(prompt, generated, &t.suffix))
            .max_by_key(|t| t.suffix.len())
    }

    fn generate(&self, request: &SampleRequest, index: u64) -> Result<SampleResult, BackendError> {
        let key = request.stream;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(&[
            self.seed,
            key.salt,
            key.iteration,
            key.beam,
            key.group,
            index,
        ]));
        let mut text = String::new();
        let mut logprob = 0.0;
        let mut reason = FinishReason::MaxTokens;
        for _ in 0..MAX_DRAWS {
            let table = self.lookup(&request.prompt, &text).ok_or_else(|| {
                let ctx = format!("{}{}", request.prompt, text);
                let tail: String = ctx.chars().rev().take(40).collect::<Vec<_>>().into_iter().rev().collect();
                BackendError::Unscripted(tail)
            })?;
            let i = table.choose(request.temperature, &mut rng);
            text.push_str(&table.texts[i]);
            logprob += table.logprobs[i];

            let stop_at = request
                .stop_sequences
                .iter()
                .filter(|s| !s.is_empty())
                .filter_map(|s| text.find(s.as_str()))
                .min();
            if let Some(pos) = stop_at {
                text.truncate(pos);
                if whitespace_tokens(&text) > request.max_tokens {
                    text.truncate(end_of_token(&text, request.max_tokens));
                    reason = FinishReason::MaxTokens;
                } else {
                    reason = FinishReason::Stop;
                }
                break;
            }
            let tokens = whitespace_tokens(&text);
            if tokens > request.max_tokens || (tokens == request.max_tokens && !table.ends[i]) {
                text.truncate(end_of_token(&text, request.max_tokens));
                reason = FinishReason::MaxTokens;
                break;
            }
            if table.ends[i] {
                reason = FinishReason::End;
                break;
            }
        }
        Ok(SampleResult {
            token_count: whitespace_tokens(&text),
            text,
            logprob,
            truncated_by: reason,
        })
    }
}

impl Sampler for MockBackend {
    fn sample(&self, request: &SampleRequest) -> Result<Vec<SampleResult>, BackendError> {
        request.validate()?;
        let results = (0..request.n as u64)
            .map(|j| self.generate(request, j))
            .collect::<Result<Vec<_>, _>>()?;
        self.meter.record(&results);
        Ok(results)
    }

    fn count_tokens(&self, text: &str) -> usize {
        whitespace_tokens(text)
    }

    fn usage(&self) -> Usage {
        self.meter.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmbackend::StreamKey;

    fn ab() -> MockBackend {
        configure_mock(
            &MockScript::new().rule(
                "P",
                vec![Continuation::ending("A", 0.7), Continuation::ending("B", 0.3)],
            ),
            1,
        )
        .unwrap()
    }

    #[test]
    fn greedy_takes_heaviest() {
        let out = ab().sample(&SampleRequest::new("P", 0.0, 4, 10)).unwrap();
        assert_eq!(out.len(), 4);
        for r in out {
            assert_eq!(r.text, "A");
            assert_eq!(r.logprob, 0.7f64.ln());
            assert_eq!(r.truncated_by, FinishReason::End);
        }
    }

    #[test]
    fn tie_breaks_lexicographically() {
        let m = configure_mock(
            &MockScript::new().rule("", vec![Continuation::ending("Y", 1.0), Continuation::ending("X", 1.0)]),
            0,
        )
        .unwrap();
        for _ in 0..3 {
            assert_eq!(m.sample(&SampleRequest::new("q", 0.0, 1, 5)).unwrap()[0].text, "X");
        }
    }

    #[test]
    fn seeded_reproducible() {
        let req = SampleRequest::new("P", 0.5, 3, 10).with_stream(StreamKey {
            iteration: 2,
            ..Default::default()
        });
        let a = ab().sample(&req).unwrap();
        let b = ab().sample(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn stop_sequence_truncates() {
        let m = configure_mock(&MockScript::new().rule("", vec![Continuation::ending("x\n\ny", 1.0)]), 0).unwrap();
        let r = &m
            .sample(&SampleRequest::new("p", 0.0, 1, 10).with_stop(["\n\n"]))
            .unwrap()[0];
        assert_eq!(r.text, "x");
        assert_eq!(r.truncated_by, FinishReason::Stop);
    }

    #[test]
    fn chains_rules_until_end() {
        let m = configure_mock(
            &MockScript::new()
                .rule("<proof>", vec![Continuation::new(" s1\n\n", 1.0)])
                .rule("s1\n\n", vec![Continuation::ending("s2 </proof>", 1.0)]),
            0,
        )
        .unwrap();
        let r = &m.sample(&SampleRequest::new("<proof>", 0.0, 1, 100)).unwrap()[0];
        assert_eq!(r.text, " s1\n\ns2 </proof>");
        assert_eq!(r.logprob, 0.0);
        assert_eq!(r.token_count, 3);
        let r = &m
            .sample(&SampleRequest::new("<proof>", 0.0, 1, 100).with_stop(["</proof>"]))
            .unwrap()[0];
        assert_eq!(r.text, " s1\n\ns2 ");
        assert_eq!(r.truncated_by, FinishReason::Stop);
    }

    #[test]
    fn max_tokens_truncates() {
        let m = configure_mock(&MockScript::new().rule("", vec![Continuation::new("a b ", 1.0)]), 0).unwrap();
        let r = &m.sample(&SampleRequest::new("p", 0.0, 1, 5)).unwrap()[0];
        assert_eq!(r.text, "a b a b a");
        assert_eq!(r.token_count, 5);
        assert_eq!(r.truncated_by, FinishReason::MaxTokens);
    }

    #[test]
    fn unscripted_prompt_errors() {
        let err = ab().sample(&SampleRequest::new("nothing", 0.0, 1, 5)).unwrap_err();
        assert!(matches!(err, BackendError::Unscripted(_)));
    }

    #[test]
    fn rejects_bad_scripts_and_requests() {
        assert!(configure_mock(&MockScript::new().rule("", vec![Continuation::new("a", 0.0)]), 0).is_err());
        assert!(configure_mock(&MockScript::new().rule("", vec![]), 0).is_err());
        assert!(ab().sample(&SampleRequest::new("P", 0.0, 0, 5)).is_err());
        assert!(ab().sample(&SampleRequest::new("P", -1.0, 1, 5)).is_err());
    }

    #[test]
    fn usage_counts_generated_tokens() {
        let m = ab();
        m.sample(&SampleRequest::new("P", 0.0, 3, 5)).unwrap();
        let u = m.usage();
        assert_eq!((u.requests, u.samples, u.generated_tokens), (1, 3, 3));
    }
}
