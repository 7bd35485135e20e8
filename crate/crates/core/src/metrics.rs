//! Evaluation metrics: Spearman rank correlation for scores, per-sub-task
//! accuracy for the factorized labels, and corpus BLEU / ROUGE-L / CIDEr for
//! captions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::DiveLabel;
use crate::error::AqaError;
use crate::Result;

/// Weighting of recall against precision in the ROUGE-L F-measure.
const ROUGE_BETA_SQ: f64 = 1.2;

/// One evaluation pass over a test set, as a flat record. Metrics of
/// inactive tasks are absent rather than zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub spearman: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_position: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_armstand: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_rotation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_somersaults: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acc_twists: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu3: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cider: Option<f64>,
}

impl EvalReport {
    /// Stores the five sub-task accuracies in schema order.
    pub fn set_accuracies(&mut self, acc: [f64; 5]) {
        self.acc_position = Some(acc[0]);
        self.acc_armstand = Some(acc[1]);
        self.acc_rotation = Some(acc[2]);
        self.acc_somersaults = Some(acc[3]);
        self.acc_twists = Some(acc[4]);
    }

    /// The five sub-task accuracies in schema order, if present.
    pub fn accuracies(&self) -> Option<[f64; 5]> {
        Some([
            self.acc_position?,
            self.acc_armstand?,
            self.acc_rotation?,
            self.acc_somersaults?,
            self.acc_twists?,
        ])
    }
}

/// Average ranks (1-based; ties share the mean of their positions).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(AqaError::UndefinedCorrelation(
            "zero rank variance (all values tied)".to_string(),
        ));
    }
    Ok(cov / (var_a.sqrt() * var_b.sqrt()))
}

/// Spearman rank correlation: Pearson correlation of the average-rank
/// vectors. Fails on fewer than two points, non-finite inputs, or when
/// either side is entirely tied.
pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(AqaError::Data(format!(
            "spearman: length mismatch ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(AqaError::UndefinedCorrelation(format!(
            "need at least 2 points, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(truth.iter()).any(|v| !v.is_finite()) {
        return Err(AqaError::Data("spearman: non-finite value".to_string()));
    }
    pearson(&average_ranks(pred), &average_ranks(truth))
}

/// Fraction of exact index matches per sub-task, in schema order.
pub fn subtask_accuracy(pred: &[DiveLabel], truth: &[DiveLabel]) -> Result<[f64; 5]> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(AqaError::Data(format!(
            "subtask_accuracy: need equal non-empty label sets ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    let mut correct = [0usize; 5];
    for (p, t) in pred.iter().zip(truth.iter()) {
        for (s, (pi, ti)) in p.indices().iter().zip(t.indices().iter()).enumerate() {
            if pi == ti {
                correct[s] += 1;
            }
        }
    }
    Ok(correct.map(|c| c as f64 / pred.len() as f64))
}

// BTreeMap rather than HashMap: the CIDEr sums below accumulate floats in
// iteration order, and a sorted order keeps repeated evaluations of the same
// corpus bit-identical.
type NgramCounts<'a> = BTreeMap<&'a [String], usize>;

fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts<'_> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

fn check_corpus(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<()> {
    if hyps.is_empty() || hyps.len() != refs.len() {
        return Err(AqaError::Data(format!(
            "caption metrics: need a non-empty corpus with one reference per hypothesis \
             ({} hypotheses, {} references)",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

/// Corpus BLEU-1..4: modified n-gram precision pooled over the corpus,
/// geometric mean up to each order, brevity penalty, no smoothing (a zero
/// precision zeroes every higher order).
pub fn bleu_corpus(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<[f64; 4]> {
    check_corpus(hyps, refs)?;
    let hyp_len: usize = hyps.iter().map(|h| h.len()).sum();
    let ref_len: usize = refs.iter().map(|r| r.len()).sum();
    if hyp_len == 0 {
        return Ok([0.0; 4]);
    }
    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };

    let mut precisions = [0.0f64; 4];
    for n in 1..=4 {
        let mut clipped = 0usize;
        let mut total = 0usize;
        for (hyp, rf) in hyps.iter().zip(refs.iter()) {
            let ref_counts = ngram_counts(rf, n);
            for (gram, count) in ngram_counts(hyp, n) {
                clipped += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
            total += hyp.len().saturating_sub(n - 1);
        }
        precisions[n - 1] = if total == 0 {
            0.0
        } else {
            clipped as f64 / total as f64
        };
    }

    let mut bleu = [0.0f64; 4];
    for k in 1..=4 {
        let head = &precisions[..k];
        bleu[k - 1] = if head.iter().any(|&p| p == 0.0) {
            0.0
        } else {
            brevity * (head.iter().map(|p| p.ln()).sum::<f64>() / k as f64).exp()
        };
    }
    Ok(bleu)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L: longest-common-subsequence F-measure, recall-weighted
/// (`β² = 1.2`), averaged over the corpus.
pub fn rouge_l_corpus(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_corpus(hyps, refs)?;
    let mut total = 0.0;
    for (hyp, rf) in hyps.iter().zip(refs.iter()) {
        if hyp.is_empty() || rf.is_empty() {
            continue;
        }
        let lcs = lcs_len(hyp, rf) as f64;
        let recall = lcs / rf.len() as f64;
        let precision = lcs / hyp.len() as f64;
        let denom = recall + ROUGE_BETA_SQ * precision;
        if denom > 0.0 {
            total += (1.0 + ROUGE_BETA_SQ) * recall * precision / denom;
        }
    }
    Ok(total / hyps.len() as f64)
}

/// CIDEr: cosine similarity of TF-IDF n-gram vectors (n = 1..4), with
/// document frequencies taken over the reference corpus, averaged over
/// samples and then over n. Falls in `[0, 1]`.
pub fn cider_corpus(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_corpus(hyps, refs)?;
    let corpus_size = refs.len() as f64;
    let mut per_n_mean = 0.0;
    for n in 1..=4 {
        let ref_counts: Vec<NgramCounts> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        let mut doc_freq: BTreeMap<&[String], usize> = BTreeMap::new();
        for counts in &ref_counts {
            for gram in counts.keys() {
                *doc_freq.entry(gram).or_insert(0) += 1;
            }
        }
        let idf = |gram: &[String]| -> f64 {
            let df = doc_freq.get(gram).copied().unwrap_or(0).max(1) as f64;
            (corpus_size / df).ln()
        };

        let mut sim_sum = 0.0;
        for (hyp, rc) in hyps.iter().zip(ref_counts.iter()) {
            let hc = ngram_counts(hyp, n);
            let mut dot = 0.0;
            let mut hyp_norm = 0.0;
            for (gram, &count) in &hc {
                let w = count as f64 * idf(gram);
                hyp_norm += w * w;
                if let Some(&ref_count) = rc.get(*gram) {
                    dot += w * ref_count as f64 * idf(gram);
                }
            }
            let ref_norm: f64 = rc
                .iter()
                .map(|(gram, &count)| {
                    let w = count as f64 * idf(gram);
                    w * w
                })
                .sum();
            if hyp_norm > 0.0 && ref_norm > 0.0 {
                sim_sum += dot / (hyp_norm.sqrt() * ref_norm.sqrt());
            }
        }
        per_n_mean += sim_sum / hyps.len() as f64 / 4.0;
    }
    Ok(per_n_mean)
}

/// All caption metrics in one call: `(BLEU-1..4, ROUGE-L, CIDEr)`.
pub fn caption_metrics(
    hyps: &[Vec<String>],
    refs: &[Vec<String>],
) -> Result<([f64; 4], f64, f64)> {
    Ok((
        bleu_corpus(hyps, refs)?,
        rouge_l_corpus(hyps, refs)?,
        cider_corpus(hyps, refs)?,
    ))
}
