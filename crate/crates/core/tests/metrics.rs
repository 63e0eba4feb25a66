mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use common::*;
use groundprover::corpus::segment_proof;
use groundprover::metrics::{
    best_of_k, gleu, halluc_rate, kf1, knowledge_tokens, pearson, ref_prf, score_proof, token_f1, tokenize,
    CorrelationError, MetricReport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Vec<String> {
    let len = rng.random_range(0..=max_len);
    (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect()
}

#[test]
fn gleu_and_token_f1_match_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..400 {
        let vocab = 2 + case % 6;
        let h = random_tokens(&mut rng, vocab, 14);
        let r = random_tokens(&mut rng, vocab, 14);
        assert_eq!(gleu(&h, &r).to_bits(), oracle_gleu(&h, &r).to_bits(), "{h:?} / {r:?}");
        assert_eq!(token_f1(&h, &r).to_bits(), oracle_token_f1(&h, &r).to_bits(), "{h:?} / {r:?}");
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn gleu_hand_values() {
    // hyp 1-grams a b (2), 2-grams ab (1); ref a b c -> 3 + 2 + 1 n-grams
    assert_eq!(gleu(&toks("a b"), &toks("a b c")), 0.5);
    assert_eq!(gleu(&toks("x y z"), &toks("x y z")), 1.0);
    assert_eq!(gleu(&toks("q"), &toks("r")), 0.0);
}

#[test]
fn ref_prf_fixture_and_empty_conventions() {
    let (p, r, f) = ref_prf(&set(&["A", "B"]), &set(&["A", "B", "C"]));
    assert!((p - 1.0).abs() < 1e-12);
    assert!((r - 2.0 / 3.0).abs() < 1e-12);
    assert!((f - 0.8).abs() < 1e-12);
    assert_eq!(ref_prf(&set(&[]), &set(&[])), (1.0, 1.0, 1.0));
    assert_eq!(ref_prf(&set(&[]), &set(&["A"])), (0.0, 0.0, 0.0));
    assert_eq!(ref_prf(&set(&["A"]), &set(&[])), (0.0, 0.0, 0.0));
}

#[test]
fn knowledge_f1_uses_gold_pages_once() {
    let c = fixture_corpus();
    let gold = set(&["Definition:Even Integer", "Definition:Even_Integer", "Missing Page"]);
    let k = knowledge_tokens(&gold, &c);
    assert_eq!(k, tokenize("An integer $n$ is even if and only if $n = 2 k$ for some integer $k$."));
    let hyp = tokenize("$n$ is even");
    assert_eq!(kf1(&hyp, &gold, &c), oracle_token_f1(&hyp, &k));
}

#[test]
fn hallucination_rate_counts_unresolved_titles() {
    let c = fixture_corpus();
    assert_eq!(halluc_rate(&set(&["Definition:Odd Integer", "Lemma:Made Up"]), &c), 0.5);
    assert_eq!(halluc_rate(&set(&[]), &c), 0.0);
}

#[test]
fn score_proof_on_gold_is_perfect() {
    let c = fixture_corpus();
    let gold = c.gold_proof(6).unwrap();
    let m = score_proof(gold, gold, &c);
    assert_eq!((m.gleu, m.token_f1, m.ref_f1, m.halluc), (1.0, 1.0, 1.0, 0.0));
    let other = segment_proof("Obvious by [[Lemma:Made Up]].");
    let m = score_proof(&other, gold, &c);
    assert_eq!((m.ref_precision, m.ref_recall, m.halluc), (0.0, 0.0, 1.0));
}

#[test]
fn metric_means_and_best_of_k() {
    let a = MetricReport { gleu: 1.0, halluc: 1.0, ..Default::default() };
    let b = MetricReport { gleu: 0.5, ..Default::default() };
    let m = MetricReport::mean(&[a.clone(), b.clone()]).unwrap();
    assert_eq!((m.gleu, m.halluc), (0.75, 0.5));
    assert_eq!(best_of_k(&[a, b]), Some(1));
    assert!(MetricReport::mean(&[]).is_none());
}

#[test]
fn pearson_fixtures() {
    let x4 = [1.0, 2.0, 3.0, 4.0];
    let y4 = [2.0, 1.0, 4.0, 3.0];
    let r = pearson(&x4, &y4).unwrap();
    assert!((r - 0.6).abs() < 1e-10);
    assert!((r - oracle_pearson(&x4, &y4)).abs() < 1e-10);

    let x5 = [0.1, 0.4, 0.35, 0.8, 0.55];
    let y5 = [1.0, 3.0, 2.0, 5.0, 4.0];
    let r = pearson(&x5, &y5).unwrap();
    assert!((r - oracle_pearson(&x5, &y5)).abs() < 1e-10);
    assert!((r - 0.979_184_098_179_367_2).abs() < 1e-10, "{r}");

    assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(CorrelationError::ZeroVariance));
    assert_eq!(pearson(&[1.0], &[2.0]), Err(CorrelationError::TooFewPoints(1)));
    assert_eq!(pearson(&[1.0, 2.0], &[2.0]), Err(CorrelationError::LengthMismatch(2, 1)));
}
