//! Corpus BLEU-4 and perplexity.
//!
//! BLEU here is the original corpus-level definition: clipped n-gram
//! precisions aggregated over the whole corpus, geometric mean over
//! n = 1..=4, multiplied by the brevity penalty. Single reference per
//! hypothesis, token-level (callers tokenize), no smoothing — any zero
//! precision zeroes the score.

use std::collections::HashMap;
use std::hash::Hash;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("hypothesis/reference count mismatch: {hypotheses} vs {references}")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("max_n must be at least 1")]
    InvalidMaxN,
    #[error("mean negative log-likelihood must be finite and >= 0, got {0}")]
    InvalidMeanNll(f64),
}

/// Per-order detail behind a BLEU score.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuBreakdown {
    /// Clipped precision per n-gram order, `precisions[n-1]` for order n.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    /// Total hypothesis length c.
    pub hypothesis_len: usize,
    /// Total reference length r.
    pub reference_len: usize,
    /// Final score in [0, 100].
    pub score: f64,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with per-order detail. `max_n` is the highest n-gram order
/// (4 for standard BLEU-4).
pub fn bleu_breakdown<T: Eq + Hash>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
) -> Result<BleuBreakdown, MetricsError> {
    if max_n == 0 {
        return Err(MetricsError::InvalidMaxN);
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }

    let hypothesis_len: usize = hypotheses.iter().map(Vec::len).sum();
    let reference_len: usize = references.iter().map(Vec::len).sum();

    let mut precisions = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (hyp, reference) in hypotheses.iter().zip(references) {
            total += hyp.len().saturating_sub(n - 1);
            let ref_counts = ngram_counts(reference, n);
            for (gram, count) in ngram_counts(hyp, n) {
                matched += count.min(*ref_counts.get(gram).unwrap_or(&0));
            }
        }
        precisions.push(if total == 0 { 0.0 } else { matched as f64 / total as f64 });
    }

    let brevity_penalty = if hypothesis_len == 0 {
        0.0
    } else if hypothesis_len > reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / hypothesis_len as f64).exp()
    };

    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log: f64 = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        100.0 * brevity_penalty * mean_log.exp()
    };

    Ok(BleuBreakdown { precisions, brevity_penalty, hypothesis_len, reference_len, score })
}

/// Corpus BLEU score in [0, 100]; see [`bleu_breakdown`].
pub fn bleu<T: Eq + Hash>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
) -> Result<f64, MetricsError> {
    Ok(bleu_breakdown(hypotheses, references, max_n)?.score)
}

/// Perplexity from a mean per-token negative log-likelihood: `exp(mean_nll)`.
pub fn perplexity(mean_nll: f64) -> Result<f64, MetricsError> {
    if !mean_nll.is_finite() || mean_nll < 0.0 {
        return Err(MetricsError::InvalidMeanNll(mean_nll));
    }
    Ok(mean_nll.exp())
}
