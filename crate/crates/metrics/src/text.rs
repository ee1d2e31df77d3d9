//! Metric tokenization, BLEU and ROUGE-L over single references.

use std::collections::HashMap;

/// Lowercase words; whitespace and every non-alphanumeric character separate.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bleu {
    pub score: f64,
    pub brevity_penalty: f64,
    /// Set when the score is zero because some order had no candidate
    /// n-grams or no matches (there is no smoothing).
    pub zero_flag: bool,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Geometric mean of clipped n-gram precisions for `n = 1..=max_n`, times
/// the brevity penalty `min(1, exp(1 - r/c))`.
pub fn bleu(candidate: &[String], reference: &[String], max_n: usize) -> Bleu {
    assert!(max_n >= 1, "max_n must be at least one");
    let c = candidate.len();
    if c == 0 {
        return Bleu { score: 0.0, brevity_penalty: 0.0, zero_flag: true };
    }
    let r = reference.len();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let clipped: usize = cand.iter().map(|(g, &k)| k.min(refc.get(g).copied().unwrap_or(0))).sum();
        if total == 0 || clipped == 0 {
            return Bleu { score: 0.0, brevity_penalty: bp, zero_flag: true };
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    Bleu { score: bp * (log_sum / max_n as f64).exp(), brevity_penalty: bp, zero_flag: false }
}

/// Longest common subsequence length, two-row DP.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Both sides empty.
    pub empty_flag: bool,
}

pub fn rouge_l(candidate: &[String], reference: &[String]) -> RougeL {
    if candidate.is_empty() && reference.is_empty() {
        return RougeL { precision: 0.0, recall: 0.0, f1: 0.0, empty_flag: true };
    }
    let l = lcs_len(candidate, reference) as f64;
    let p = if candidate.is_empty() { 0.0 } else { l / candidate.len() as f64 };
    let r = if reference.is_empty() { 0.0 } else { l / reference.len() as f64 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    RougeL { precision: p, recall: r, f1, empty_flag: false }
}
