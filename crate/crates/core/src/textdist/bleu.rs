use std::collections::HashMap;

use super::tokenize;

const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence-level BLEU-4 of `candidate` against a single `reference`.
///
/// Uniform weights, clipped n-gram counts, add-one smoothing on the 2..4-gram
/// precisions (unigram precision is unsmoothed) and the standard brevity
/// penalty.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let c = ngram_counts(&cand, n);
        let r = ngram_counts(&refs, n);
        let matched: usize = c.iter().map(|(g, &k)| k.min(*r.get(g).unwrap_or(&0))).sum();
        let total = cand.len().saturating_sub(n - 1);
        let (num, den) = if n == 1 {
            (matched as f64, total as f64)
        } else {
            (matched as f64 + 1.0, total as f64 + 1.0)
        };
        if num == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln() / MAX_ORDER as f64;
    }
    let (c, r) = (cand.len() as f64, refs.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

/// `1 - BLEU-4(candidate, reference)`; empty input gives distance 1.
pub fn bleu_distance(candidate: &str, reference: &str) -> f64 {
    (1.0 - bleu(candidate, reference)).clamp(0.0, 1.0)
}
