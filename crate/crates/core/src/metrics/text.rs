use std::collections::HashMap;

use crate::error::{Error, Result};

const BLEU_ORDER: usize = 4;
const BLEU_EPSILON: f64 = 1e-9;

/// Lowercased whitespace tokenization used by every text metric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextPair {
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
}

impl TextPair {
    pub fn new(reference: &str, hypothesis: &str) -> Self {
        Self {
            reference: tokenize(reference),
            hypothesis: tokenize(hypothesis),
        }
    }
}

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Edit distance over reference length; can exceed 1 for long hypotheses.
pub fn wer(pair: &TextPair) -> Result<f64> {
    if pair.reference.is_empty() {
        return Err(Error::UndefinedMetric("WER of an empty reference".into()));
    }
    Ok(edit_distance(&pair.reference, &pair.hypothesis) as f64 / pair.reference.len() as f64)
}

/// Total edits over total reference words.
pub fn corpus_wer(pairs: &[TextPair]) -> Result<f64> {
    let words: usize = pairs.iter().map(|p| p.reference.len()).sum();
    if words == 0 {
        return Err(Error::UndefinedMetric("WER of an empty reference corpus".into()));
    }
    let edits: usize = pairs.iter().map(|p| edit_distance(&p.reference, &p.hypothesis)).sum();
    Ok(edits as f64 / words as f64)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Corpus BLEU-4 with one reference per hypothesis.
///
/// Clipped n-gram matches and hypothesis n-gram totals are pooled over the
/// corpus before dividing. A zero match count becomes `1e-9`, so the score
/// stays positive but tiny. An order with no hypothesis n-grams at all uses
/// precision `1e-9` as well.
pub fn bleu(references: &[Vec<String>], hypotheses: &[Vec<String>]) -> Result<f64> {
    if references.len() != hypotheses.len() {
        return Err(Error::Usage(format!(
            "{} references for {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::Usage("BLEU of an empty corpus".into()));
    }
    let mut matches = [0usize; BLEU_ORDER];
    let mut totals = [0usize; BLEU_ORDER];
    let (mut ref_len, mut hyp_len) = (0usize, 0usize);
    for (r, h) in references.iter().zip(hypotheses) {
        ref_len += r.len();
        hyp_len += h.len();
        for n in 1..=BLEU_ORDER {
            let ref_counts = ngram_counts(r, n);
            for (gram, count) in ngram_counts(h, n) {
                matches[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log_precision: f64 = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| {
            let p = if t == 0 {
                BLEU_EPSILON
            } else if m == 0 {
                BLEU_EPSILON / t as f64
            } else {
                m as f64 / t as f64
            };
            p.ln()
        })
        .sum::<f64>()
        / BLEU_ORDER as f64;
    let brevity = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0);
    Ok((brevity + log_precision).exp())
}
