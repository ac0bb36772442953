use std::collections::HashSet;

use crate::corpus::{TokenId, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NgramScope {
    /// Distinct n-grams over all n-gram tokens of the batch.
    #[default]
    Batch,
    /// Mean over sequences of each sequence's own distinct ratio.
    PerSequence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityMetrics {
    /// Distinct sequences / batch size.
    pub rho: f64,
    pub rho_2: f64,
    pub rho_4: f64,
    /// Mean number of non-PAD tokens.
    pub mean_length: f64,
}

/// Ratio of distinct n-grams to n-gram tokens. A batch without any n-gram of
/// this order has nothing repeated and scores 1.
pub fn distinct_ngram_ratio<S: AsRef<[TokenId]>>(batch: &[S], n: usize, scope: NgramScope) -> f64 {
    match scope {
        NgramScope::Batch => {
            let mut seen = HashSet::new();
            let mut total = 0usize;
            for s in batch {
                for w in s.as_ref().windows(n) {
                    seen.insert(w);
                    total += 1;
                }
            }
            if total == 0 {
                1.0
            } else {
                seen.len() as f64 / total as f64
            }
        }
        NgramScope::PerSequence => {
            let ratios: Vec<f64> = batch
                .iter()
                .filter(|s| s.as_ref().len() >= n)
                .map(|s| {
                    let windows = s.as_ref().windows(n);
                    let total = windows.len();
                    let distinct: HashSet<&[TokenId]> = windows.collect();
                    distinct.len() as f64 / total as f64
                })
                .collect();
            if ratios.is_empty() {
                1.0
            } else {
                ratios.iter().sum::<f64>() / ratios.len() as f64
            }
        }
    }
}

pub fn diversity_metrics<S: AsRef<[TokenId]>>(batch: &[S], scope: NgramScope) -> DiversityMetrics {
    assert!(!batch.is_empty(), "diversity of an empty batch is undefined");
    let distinct: HashSet<&[TokenId]> = batch.iter().map(AsRef::as_ref).collect();
    let tokens: usize = batch
        .iter()
        .map(|s| s.as_ref().iter().filter(|&&id| id != PAD_ID).count())
        .sum();
    DiversityMetrics {
        rho: distinct.len() as f64 / batch.len() as f64,
        rho_2: distinct_ngram_ratio(batch, 2, scope),
        rho_4: distinct_ngram_ratio(batch, 4, scope),
        mean_length: tokens as f64 / batch.len() as f64,
    }
}
