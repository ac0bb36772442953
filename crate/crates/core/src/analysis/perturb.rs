//! Single-token perturbations and the position-by-position sensitivity
//! matrix built from them.
//!
//! The workflow has two phases so that the encoder stays outside this crate:
//! [`perturb_plan`] picks one position per sequence and a replacement token,
//! the original and perturbed corpora are embedded elsewhere, and
//! [`sensitivity_matrix`] aggregates the kernel reward between the two
//! embeddings at every position.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Sequence, TokenId};
use crate::embedding::EmbeddedSequence;
use crate::error::{Error, Result};
use crate::kmeans::squared_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Perturbation {
    /// Index of the sequence in the corpus.
    pub seq_id: u64,
    /// 0-based position that is replaced.
    pub position: usize,
    pub replacement: TokenId,
}

/// One perturbation per sequence: a uniform position and a replacement drawn
/// from the corpus unigram distribution (which may equal the original).
pub fn perturb_plan(corpus: &Corpus, seed: u64) -> Vec<Perturbation> {
    let counts = corpus.unigram_counts();
    let unigram = WeightedIndex::new(&counts).expect("a non-empty corpus has a token");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .sequences()
        .iter()
        .enumerate()
        .map(|(i, s)| Perturbation {
            seq_id: i as u64,
            position: rng.random_range(0..s.len()),
            replacement: unigram.sample(&mut rng) as TokenId,
        })
        .collect()
}

/// The corpus with each plan entry applied.
pub fn apply_plan(corpus: &Corpus, plan: &[Perturbation]) -> Result<Corpus> {
    let mut seqs: Vec<Vec<TokenId>> = corpus
        .sequences()
        .iter()
        .map(|s| s.ids().to_vec())
        .collect();
    for p in plan {
        let seq = usize::try_from(p.seq_id)
            .ok()
            .and_then(|i| seqs.get_mut(i))
            .ok_or_else(|| Error::Malformed(format!("plan names unknown sequence {}", p.seq_id)))?;
        let slot = seq.get_mut(p.position).ok_or_else(|| {
            Error::Malformed(format!(
                "plan position {} outside sequence {}",
                p.position, p.seq_id
            ))
        })?;
        *slot = p.replacement;
    }
    let seqs = seqs.into_iter().map(Sequence::new).collect::<Result<Vec<_>>>()?;
    Corpus::new(seqs, corpus.vocabulary().clone())
}

/// Mean reward at position `t` (column) for sequences perturbed at `j` (row).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    len: usize,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl SensitivityMatrix {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `None` when no pair was perturbed at row `j`.
    pub fn get(&self, j: usize, t: usize) -> Option<f64> {
        let c = self.counts[j];
        (c > 0).then(|| self.sums[j * self.len + t] / c as f64)
    }

    pub fn row_count(&self, j: usize) -> u64 {
        self.counts[j]
    }

    /// Mean over populated cells with `|t - j| > band`.
    pub fn off_band_mean(&self, band: usize) -> f64 {
        self.cell_mean(|j, t| j.abs_diff(t) > band)
    }

    /// Mean over populated diagonal cells.
    pub fn diagonal_mean(&self) -> f64 {
        self.cell_mean(|j, t| j == t)
    }

    fn cell_mean(&self, keep: impl Fn(usize, usize) -> bool) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for j in 0..self.len {
            for t in 0..self.len {
                if keep(j, t) {
                    if let Some(v) = self.get(j, t) {
                        sum += v;
                        n += 1;
                    }
                }
            }
        }
        sum / n as f64
    }

    /// Length line followed by one row per perturbed position; cells with no
    /// samples print as `-`.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.len);
        for j in 0..self.len {
            let row: Vec<String> = (0..self.len)
                .map(|t| self.get(j, t).map_or_else(|| "-".to_string(), |v| format!("{v:.6}")))
                .collect();
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// A pair of embeddings of one sequence before and after perturbing
/// `position`.
#[derive(Debug, Clone, Copy)]
pub struct PerturbedPair<'a> {
    pub original: &'a EmbeddedSequence,
    pub perturbed: &'a EmbeddedSequence,
    pub position: usize,
}

pub fn sensitivity_matrix(pairs: &[PerturbedPair<'_>], gamma: f64) -> Result<SensitivityMatrix> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidParameter("no perturbed pairs".into()))?;
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let len = first.original.len();
    let mut m = SensitivityMatrix {
        len,
        sums: vec![0.0; len * len],
        counts: vec![0; len],
    };
    for p in pairs {
        for s in [p.original, p.perturbed] {
            if s.len() != len {
                return Err(Error::LengthMismatch {
                    left: len,
                    right: s.len(),
                });
            }
            if s.dim() != first.original.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.original.dim(),
                    got: s.dim(),
                });
            }
        }
        if p.position >= len {
            return Err(Error::Malformed(format!(
                "perturbed position {} outside length {len}",
                p.position
            )));
        }
        let row = &mut m.sums[p.position * len..(p.position + 1) * len];
        for (cell, (u, v)) in row.iter_mut().zip(p.original.rows().zip(p.perturbed.rows())) {
            *cell += (-gamma * squared_distance(u, v)).exp();
        }
        m.counts[p.position] += 1;
    }
    Ok(m)
}
