use super::tokenize;

/// Exact-match unigram alignment: each candidate token takes the earliest
/// unused identical reference token. Returns `(candidate_pos, reference_pos)`
/// pairs in candidate order.
fn align(cand: &[String], refs: &[String]) -> Vec<(usize, usize)> {
    let mut used = vec![false; refs.len()];
    let mut pairs = Vec::new();
    for (i, tok) in cand.iter().enumerate() {
        if let Some(j) = (0..refs.len()).find(|&j| !used[j] && &refs[j] == tok) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Number of maximal runs that are contiguous in both sentences.
fn chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// METEOR with exact unigram matching only (no stemming or synonyms).
pub fn meteor(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    let pairs = align(&cand, &refs);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / refs.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks(&pairs) as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

pub fn meteor_distance(candidate: &str, reference: &str) -> f64 {
    (1.0 - meteor(candidate, reference)).clamp(0.0, 1.0)
}
