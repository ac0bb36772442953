//! RBF-kernel rewards over contextual embeddings, the pruned index-based
//! reward, and the per-position mixture with shaped n-gram reward.

use crate::corpus::{TokenId, PAD_ID};
use crate::embedding::EmbeddedSequence;
use crate::error::{Error, Result};
use crate::index::BertGramIndex;
use crate::kmeans::squared_distance;

pub const DEFAULT_GAMMA: f64 = 0.06;
pub const DEFAULT_MIX_WEIGHT: f64 = 0.25;
/// Bandwidths outside this range are rejected by [`RewardParams::new`].
pub const GAMMA_RANGE: (f64, f64) = (1e-4, 0.5);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardParams {
    gamma: f64,
    mix_weight: f64,
    pad_id: TokenId,
}

impl RewardParams {
    pub fn new(gamma: f64, mix_weight: f64) -> Result<Self> {
        if !(gamma.is_finite() && (GAMMA_RANGE.0..=GAMMA_RANGE.1).contains(&gamma)) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [{}, {}], got {gamma}",
                GAMMA_RANGE.0, GAMMA_RANGE.1
            )));
        }
        if !(0.0..=1.0).contains(&mix_weight) {
            return Err(Error::InvalidParameter(format!(
                "mix weight must lie in [0, 1], got {mix_weight}"
            )));
        }
        Ok(Self {
            gamma,
            mix_weight,
            pad_id: PAD_ID,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mix_weight(&self) -> f64 {
        self.mix_weight
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad_id
    }
}

impl Default for RewardParams {
    fn default() -> Self {
        Self::new(DEFAULT_GAMMA, DEFAULT_MIX_WEIGHT).expect("defaults are valid")
    }
}

/// Per-position rewards and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBreakdown {
    pub per_position: Vec<f64>,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_positions(per_position: Vec<f64>) -> Self {
        let total = if per_position.is_empty() {
            0.0
        } else {
            per_position.iter().sum::<f64>() / per_position.len() as f64
        };
        Self {
            per_position,
            total,
        }
    }

    pub fn len(&self) -> usize {
        self.per_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_position.is_empty()
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")))
    }
}

#[inline]
fn kernel(squared: f64, gamma: f64) -> f64 {
    (-gamma * squared).exp()
}

/// `exp(-gamma * |u - v|^2)`.
pub fn rbf(u: &[f32], v: &[f32], gamma: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    check_gamma(gamma)?;
    Ok(kernel(squared_distance(u, v), gamma))
}

/// Position-aligned kernel reward between two sequences of equal length.
pub fn pairwise_reward(
    a: &EmbeddedSequence,
    b: &EmbeddedSequence,
    gamma: f64,
) -> Result<RewardBreakdown> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    check_gamma(gamma)?;
    let per_position = a
        .rows()
        .zip(b.rows())
        .map(|(u, v)| kernel(squared_distance(u, v), gamma))
        .collect();
    Ok(RewardBreakdown::from_positions(per_position))
}

/// Best single reference among those with the candidate's length, by
/// brute force over the whole set. Returns the index into `refs`.
pub fn exact_set_reward(
    candidate: &EmbeddedSequence,
    refs: &[EmbeddedSequence],
    gamma: f64,
) -> Result<(usize, RewardBreakdown)> {
    let mut best: Option<(usize, RewardBreakdown)> = None;
    for (i, r) in refs.iter().enumerate() {
        if r.len() != candidate.len() {
            continue;
        }
        let rb = pairwise_reward(candidate, r, gamma)?;
        if best.as_ref().is_none_or(|(_, b)| rb.total > b.total) {
            best = Some((i, rb));
        }
    }
    best.ok_or(Error::NoEqualLengthReference(candidate.len()))
}

/// Per-position maximum kernel value against the centroids of each
/// position's own word type. Unknown types and PAD score 0.
pub fn indexed_reward(
    ids: &[TokenId],
    embeddings: &EmbeddedSequence,
    index: &BertGramIndex,
    gamma: f64,
) -> Result<RewardBreakdown> {
    if ids.len() != embeddings.len() {
        return Err(Error::LengthMismatch {
            left: ids.len(),
            right: embeddings.len(),
        });
    }
    if embeddings.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            got: embeddings.dim(),
        });
    }
    check_gamma(gamma)?;
    let per_position = ids
        .iter()
        .zip(embeddings.rows())
        .map(|(&w, v)| match index.get(w) {
            Some(types) if w != PAD_ID => kernel(types.nearest(v).1, gamma),
            _ => 0.0,
        })
        .collect();
    Ok(RewardBreakdown::from_positions(per_position))
}

/// `mix_weight * bert + (1 - mix_weight) * ngram` at every position. Values
/// are not clamped: shaped n-gram increments may be negative.
pub fn mixed_reward(
    bert: &RewardBreakdown,
    ngram_increments: &[f64],
    mix_weight: f64,
) -> Result<RewardBreakdown> {
    if bert.len() != ngram_increments.len() {
        return Err(Error::LengthMismatch {
            left: bert.len(),
            right: ngram_increments.len(),
        });
    }
    if !(0.0..=1.0).contains(&mix_weight) {
        return Err(Error::InvalidParameter(format!(
            "mix weight must lie in [0, 1], got {mix_weight}"
        )));
    }
    if mix_weight == 1.0 {
        return Ok(bert.clone());
    }
    if mix_weight == 0.0 {
        return Ok(RewardBreakdown::from_positions(ngram_increments.to_vec()));
    }
    let per_position = bert
        .per_position
        .iter()
        .zip(ngram_increments)
        .map(|(b, n)| mix_weight * b + (1.0 - mix_weight) * n)
        .collect();
    Ok(RewardBreakdown::from_positions(per_position))
}

/// Truncates to the first `target` tokens or right-pads with `pad`.
pub fn normalize_length(ids: &[TokenId], target: usize, pad: TokenId) -> Vec<TokenId> {
    let mut out: Vec<TokenId> = ids.iter().copied().take(target).collect();
    out.resize(target, pad);
    out
}
