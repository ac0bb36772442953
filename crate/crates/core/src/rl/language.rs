//! Random trigram languages used as known ground truth for the trainer.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::corpus::{Corpus, Sequence, TokenId, Vocabulary};
use crate::error::{Error, Result};

use super::policy::TabularPolicy;

/// Second-order Markov source over `vocab` tokens. The history before the
/// first token is filled with the marker `vocab`, like [`TabularPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrigramLanguage {
    vocab: usize,
    /// Row-major over `(a, b)` with `a, b` in `0..=vocab`.
    table: Vec<Vec<f64>>,
}

impl TrigramLanguage {
    /// Every history gets its own next-token distribution: `support` distinct
    /// tokens with flat-Dirichlet weights.
    pub fn random(vocab: usize, support: usize, seed: u64) -> Result<Self> {
        if vocab == 0 || support == 0 || support > vocab {
            return Err(Error::InvalidParameter(format!(
                "support {support} must lie in 1..={vocab}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = vocab + 1;
        let table = (0..n * n)
            .map(|_| {
                let mut row = vec![0.0; vocab];
                let picks = sample(&mut rng, vocab, support);
                let weights: Vec<f64> = (0..support).map(|_| Exp1.sample(&mut rng)).collect();
                let sum: f64 = weights.iter().sum();
                for (i, w) in picks.iter().zip(weights) {
                    row[i] = w / sum;
                }
                row
            })
            .collect();
        Ok(Self { vocab, table })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn bos(&self) -> TokenId {
        self.vocab as TokenId
    }

    /// Next-token distribution after history `[a, b]`.
    pub fn probs(&self, a: TokenId, b: TokenId) -> &[f64] {
        &self.table[a as usize * (self.vocab + 1) + b as usize]
    }

    pub fn sample_sequence<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<TokenId> {
        let bos = self.bos();
        let mut out: Vec<TokenId> = Vec::with_capacity(len);
        for t in 0..len {
            let a = if t >= 2 { out[t - 2] } else { bos };
            let b = if t >= 1 { out[t - 1] } else { bos };
            let u: f64 = rng.random();
            let p = self.probs(a, b);
            let mut acc = 0.0;
            let mut pick = p.iter().rposition(|&q| q > 0.0).unwrap_or(0);
            for (i, &q) in p.iter().enumerate() {
                acc += q;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            out.push(pick as TokenId);
        }
        out
    }

    /// `count` sequences with lengths uniform over `lengths`.
    pub fn sample_corpus(
        &self,
        count: usize,
        lengths: std::ops::RangeInclusive<usize>,
        seed: u64,
    ) -> Result<Corpus> {
        if *lengths.start() == 0 || lengths.is_empty() {
            return Err(Error::InvalidParameter("lengths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs = (0..count)
            .map(|_| {
                let len = rng.random_range(lengths.clone());
                Sequence::new(self.sample_sequence(len, &mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(seqs, Vocabulary::synthetic(self.vocab))
    }

    /// Total variation between the policy and the source after `[a, b]`.
    pub fn total_variation(&self, policy: &TabularPolicy, a: TokenId, b: TokenId) -> f64 {
        let p = policy.probs(&[a, b]);
        0.5 * p
            .iter()
            .zip(self.probs(a, b))
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions_with_given_support() {
        let lang = TrigramLanguage::random(20, 3, 1).unwrap();
        for a in 0..=20 {
            for b in 0..=20 {
                let p = lang.probs(a, b);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(p.iter().filter(|&&q| q > 0.0).count(), 3);
            }
        }
        assert!(TrigramLanguage::random(4, 5, 0).is_err());
    }

    #[test]
    fn corpus_respects_lengths_and_support() {
        let lang = TrigramLanguage::random(6, 2, 3).unwrap();
        let c = lang.sample_corpus(200, 5..=10, 9).unwrap();
        assert_eq!(c.len(), 200);
        for s in c.sequences() {
            assert!((5..=10).contains(&s.len()));
            let ids = s.ids();
            for t in 0..ids.len() {
                let a = if t >= 2 { ids[t - 2] } else { 6 };
                let b = if t >= 1 { ids[t - 1] } else { 6 };
                assert!(lang.probs(a, b)[ids[t] as usize] > 0.0);
            }
        }
        assert_eq!(c, lang.sample_corpus(200, 5..=10, 9).unwrap());
    }
}
