//! Clipped n-gram reward against a reference set.
//!
//! [`MaxCountTable`] stores, for every n-gram seen in any reference, the
//! largest count it reaches within a single reference. Clipping a candidate's
//! counts against that table gives the same modified precision as clipping
//! against every reference and taking the best, but without touching the
//! references at scoring time.

use std::collections::HashMap;
use std::path::Path;

use crate::codec::{self, Reader};
use crate::corpus::{ngram_counts, Corpus, TokenId};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"NGTB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxCountTable {
    // orders[n - 1] holds n-grams of length n
    orders: Vec<HashMap<Vec<TokenId>, u32>>,
}

impl MaxCountTable {
    pub fn n_max(&self) -> usize {
        self.orders.len()
    }

    /// Maximum reference count of `ngram`; 0 when it never occurs.
    pub fn max_count(&self, ngram: &[TokenId]) -> u32 {
        match ngram.len() {
            0 => 0,
            n if n > self.orders.len() => 0,
            n => self.orders[n - 1].get(ngram).copied().unwrap_or(0),
        }
    }

    pub fn order(&self, n: usize) -> Option<&HashMap<Vec<TokenId>, u32>> {
        n.checked_sub(1).and_then(|i| self.orders.get(i))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        codec::put_u32(&mut out, VERSION);
        codec::put_u32(&mut out, self.orders.len() as u32);
        for table in &self.orders {
            let mut entries: Vec<_> = table.iter().collect();
            entries.sort_unstable();
            codec::put_u64(&mut out, entries.len() as u64);
            for (ngram, &count) in entries {
                for &id in ngram {
                    codec::put_u32(&mut out, id);
                }
                codec::put_u32(&mut out, count);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let n_max = r.u32()? as usize;
        if n_max == 0 {
            return Err(Error::Malformed("n_max must be at least 1".into()));
        }
        let mut orders = Vec::with_capacity(n_max);
        for n in 1..=n_max {
            let raw = r.u64()?;
            let entries = r.count(raw, 4 * (n + 1))?;
            let mut table = HashMap::with_capacity(entries);
            for _ in 0..entries {
                let at = r.offset();
                let ngram = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let count = r.u32()?;
                if count == 0 {
                    return Err(Error::Malformed(format!("zero count at byte offset {at}")));
                }
                if table.insert(ngram, count).is_some() {
                    return Err(Error::Malformed(format!(
                        "duplicate n-gram at byte offset {at}"
                    )));
                }
            }
            orders.push(table);
        }
        r.finish()?;
        Ok(Self { orders })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&codec::read_file(path.as_ref())?)
    }
}

pub fn build_max_count_table(references: &Corpus, n_max: usize) -> Result<MaxCountTable> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    let mut orders: Vec<HashMap<Vec<TokenId>, u32>> = vec![HashMap::new(); n_max];
    for seq in references.sequences() {
        for (i, table) in orders.iter_mut().enumerate() {
            for (ngram, count) in ngram_counts(seq.ids(), i + 1) {
                match table.get_mut(ngram) {
                    Some(best) => *best = (*best).max(count),
                    None => {
                        table.insert(ngram.to_vec(), count);
                    }
                }
            }
        }
    }
    Ok(MaxCountTable { orders })
}

/// Clipped matches and the number of candidate n-grams, `(matched, total)`.
pub fn modified_precision(
    candidate: &[TokenId],
    table: &MaxCountTable,
    n: usize,
) -> Result<(u64, u64)> {
    if n == 0 || n > table.n_max() {
        return Err(Error::OrderOutOfRange {
            n,
            n_max: table.n_max(),
        });
    }
    let total = (candidate.len() + 1).saturating_sub(n) as u64;
    let matched = ngram_counts(candidate, n)
        .into_iter()
        .map(|(ngram, count)| u64::from(count.min(table.max_count(ngram))))
        .sum();
    Ok((matched, total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuParams {
    weights: Vec<f64>,
    smoothing: bool,
}

impl BleuParams {
    pub fn new(weights: Vec<f64>, smoothing: bool) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("at least one n-gram weight required".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter("n-gram weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "n-gram weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self { weights, smoothing })
    }

    /// Equal weight on orders 1..=n_max, smoothing on.
    pub fn uniform(n_max: usize) -> Self {
        Self::new(vec![1.0 / n_max as f64; n_max], true).expect("uniform weights are valid")
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_max(&self) -> usize {
        self.weights.len()
    }

    pub fn smoothing(&self) -> bool {
        self.smoothing
    }
}

impl Default for BleuParams {
    fn default() -> Self {
        Self::uniform(4)
    }
}

/// Scores live on a fixed grid of 2^-52 so that differences of scores and
/// their running sums are exact in f64.
const SCORE_GRID: f64 = 4_503_599_627_370_496.0; // 2^52

fn snap(score: f64) -> f64 {
    (score * SCORE_GRID).round() / SCORE_GRID
}

/// Sentence-level BLEU without brevity penalty.
///
/// Orders the candidate is too short for are dropped and the remaining
/// weights renormalized. With smoothing on, the i-th order (ascending) that
/// has no clipped match gets precision `1 / (2^i * total)`.
pub fn bleu(candidate: &[TokenId], table: &MaxCountTable, params: &BleuParams) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::InvalidParameter("candidate must be non-empty".into()));
    }
    if params.n_max() != table.n_max() {
        return Err(Error::InvalidParameter(format!(
            "{} weights for a table of order {}",
            params.n_max(),
            table.n_max()
        )));
    }

    let mut precisions = Vec::with_capacity(params.n_max());
    let mut zero_matches = 0i32;
    for n in 1..=params.n_max() {
        let (matched, total) = modified_precision(candidate, table, n)?;
        if total == 0 {
            continue;
        }
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if params.smoothing {
            zero_matches += 1;
            1.0 / (2f64.powi(zero_matches) * total as f64)
        } else {
            0.0
        };
        precisions.push((params.weights[n - 1], p));
    }

    let weight_sum: f64 = precisions.iter().map(|(w, _)| w).sum();
    // All included orders carry zero weight: fall back to equal weights.
    let uniform = weight_sum == 0.0;
    let mut log_sum = 0.0;
    for &(w, p) in &precisions {
        let w = if uniform { 1.0 } else { w };
        if w > 0.0 {
            log_sum += w * p.ln();
        }
    }
    let norm = if uniform {
        precisions.len() as f64
    } else {
        weight_sum
    };
    Ok(snap((log_sum / norm).exp()))
}

/// Per-position increments `bleu(s[..t]) - bleu(s[..t-1])` with the empty
/// prefix scoring 0. Summed left to right they reproduce every prefix score
/// exactly, and so the full score.
pub fn shaped_increments(
    candidate: &[TokenId],
    table: &MaxCountTable,
    params: &BleuParams,
) -> Result<Vec<f64>> {
    if candidate.is_empty() {
        return Err(Error::InvalidParameter("candidate must be non-empty".into()));
    }
    let mut prev = 0.0;
    let mut out = Vec::with_capacity(candidate.len());
    for t in 1..=candidate.len() {
        let score = bleu(&candidate[..t], table, params)?;
        out.push(score - prev);
        prev = score;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Sequence, Vocabulary};

    fn corpus(seqs: &[&[u32]]) -> Corpus {
        let v = seqs.iter().flat_map(|s| s.iter()).max().copied().unwrap_or(0) as usize + 1;
        Corpus::new(
            seqs.iter().map(|s| Sequence::new(s.to_vec()).unwrap()).collect(),
            Vocabulary::synthetic(v.max(6)),
        )
        .unwrap()
    }

    #[test]
    fn table_takes_per_reference_max() {
        let t = build_max_count_table(&corpus(&[&[0, 1], &[0, 0]]), 1).unwrap();
        assert_eq!(t.order(1).unwrap().len(), 2);
        assert_eq!(t.max_count(&[0]), 2);
        assert_eq!(t.max_count(&[1]), 1);

        let t = build_max_count_table(&corpus(&[&[0, 1]]), 2).unwrap();
        assert_eq!(t.order(2).unwrap().len(), 1);
        assert_eq!(t.max_count(&[0, 1]), 1);
        assert_eq!(t.max_count(&[5, 5]), 0);
    }

    #[test]
    fn modified_precision_examples() {
        let t = build_max_count_table(&corpus(&[&[0, 1]]), 2).unwrap();
        assert_eq!(modified_precision(&[0, 1, 0], &t, 1).unwrap(), (2, 3));
        assert_eq!(modified_precision(&[0, 1], &t, 1).unwrap(), (2, 2));
        assert_eq!(modified_precision(&[0, 1], &t, 2).unwrap(), (1, 1));
        assert_eq!(modified_precision(&[3, 4, 5], &t, 2).unwrap(), (0, 2));
        assert!(matches!(
            modified_precision(&[0], &t, 3),
            Err(Error::OrderOutOfRange { n: 3, n_max: 2 })
        ));
        assert!(modified_precision(&[0], &t, 0).is_err());
    }

    #[test]
    fn bleu_examples() {
        let r = [3u32, 1, 4, 1, 5];
        let t = build_max_count_table(&corpus(&[&r]), 4).unwrap();
        assert_eq!(bleu(&r, &t, &BleuParams::uniform(4)).unwrap(), 1.0);

        let t = build_max_count_table(&corpus(&[&[0, 1]]), 2).unwrap();
        let p = BleuParams::uniform(2);
        let s = bleu(&[0, 1, 0], &t, &p).unwrap();
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-12, "{s}");
        assert!((s - 0.5774).abs() < 5e-5);

        let s = bleu(&[3, 4, 5], &t, &p).unwrap();
        let expected = (0.5 * (1.0f64 / 6.0).ln() + 0.5 * (1.0f64 / 8.0).ln()).exp();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.1443).abs() < 5e-5);
    }

    #[test]
    fn unsmoothed_zero_match_scores_zero() {
        let t = build_max_count_table(&corpus(&[&[0, 1]]), 2).unwrap();
        let p = BleuParams::new(vec![0.5, 0.5], false).unwrap();
        assert_eq!(bleu(&[1, 0], &t, &p).unwrap(), 0.0);
    }

    #[test]
    fn short_candidate_drops_orders() {
        let t = build_max_count_table(&corpus(&[&[0, 1]]), 2).unwrap();
        // only the unigram order applies; its weight renormalizes to 1
        assert_eq!(bleu(&[0], &t, &BleuParams::uniform(2)).unwrap(), 1.0);
        assert_eq!(
            bleu(&[2], &t, &BleuParams::uniform(2)).unwrap(),
            0.5,
            "one smoothed unigram order: 1/(2*1)"
        );
        let bigram_only = BleuParams::new(vec![0.0, 1.0], true).unwrap();
        assert_eq!(bleu(&[0], &t, &bigram_only).unwrap(), 1.0);
    }

    #[test]
    fn params_validation() {
        assert!(BleuParams::new(vec![0.5, 0.6], true).is_err());
        assert!(BleuParams::new(vec![-0.5, 1.5], true).is_err());
        assert!(BleuParams::new(vec![], true).is_err());
        let t = build_max_count_table(&corpus(&[&[0, 1]]), 2).unwrap();
        assert!(bleu(&[0], &t, &BleuParams::uniform(4)).is_err());
        assert!(bleu(&[], &t, &BleuParams::uniform(2)).is_err());
    }

    #[test]
    fn identity_unigram_increments() {
        let r = [2u32, 0, 3, 1];
        let t = build_max_count_table(&corpus(&[&r]), 1).unwrap();
        let inc = shaped_increments(&r, &t, &BleuParams::uniform(1)).unwrap();
        assert_eq!(inc, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn permuted_reference_unigram_increments() {
        let t = build_max_count_table(&corpus(&[&[1, 0]]), 1).unwrap();
        let inc = shaped_increments(&[0, 1], &t, &BleuParams::uniform(1)).unwrap();
        assert_eq!(inc, vec![1.0, 0.0]);
    }

    #[test]
    fn ngtb_round_trip_and_corruption() {
        let t = build_max_count_table(&corpus(&[&[0, 1, 2, 1], &[2, 2]]), 3).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(MaxCountTable::from_bytes(&bytes).unwrap(), t);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(MaxCountTable::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            MaxCountTable::from_bytes(&bad),
            Err(Error::UnsupportedVersion(2))
        ));
        assert!(matches!(
            MaxCountTable::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(MaxCountTable::from_bytes(&bad), Err(Error::Malformed(_))));
    }
}
