//! The clustered contextual-embedding index.
//!
//! Every occurrence of a word type in the reference corpus is grouped with
//! the other occurrences of that type and condensed into at most `K`
//! centroids. Scoring a candidate position then only scans the centroids of
//! its own type, so the cost per position is bounded by `d * K` whatever the
//! corpus size.
//!
//! BGIX layout (little-endian): magic `BGIX`, u32 version = 1, u32 d,
//! u32 K_max, u32 num_types; per type u32 token id, u32 k_w, then k_w records
//! of d f32 centroid values, u64 exemplar seq_id and u32 exemplar position.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::codec::{self, Reader};
use crate::corpus::{TokenId, PAD_ID};
use crate::embedding::EmbeddedCorpus;
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, squared_distance, KMeansConfig};

const MAGIC: [u8; 4] = *b"BGIX";
const VERSION: u32 = 1;

/// Where a vector came from: sequence id and 0-based position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Occurrence {
    pub seq_id: u64,
    pub position: u32,
}

/// All contextual vectors of one word type.
#[derive(Debug, Clone, PartialEq)]
pub struct TypePartition {
    pub token: TokenId,
    pub dim: usize,
    pub vectors: Vec<f32>,
    pub occurrences: Vec<Occurrence>,
}

impl TypePartition {
    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

/// Groups every non-PAD position of the corpus by token id.
pub fn partition_by_type(corpus: &EmbeddedCorpus) -> BTreeMap<TokenId, TypePartition> {
    let dim = corpus.dim();
    let mut parts: BTreeMap<TokenId, TypePartition> = BTreeMap::new();
    for seq in corpus.sequences() {
        for (t, (&id, row)) in seq.ids().iter().zip(seq.rows()).enumerate() {
            if id == PAD_ID {
                continue;
            }
            let part = parts.entry(id).or_insert_with(|| TypePartition {
                token: id,
                dim,
                vectors: Vec::new(),
                occurrences: Vec::new(),
            });
            part.vectors.extend_from_slice(row);
            part.occurrences.push(Occurrence {
                seq_id: seq.seq_id(),
                position: t as u32,
            });
        }
    }
    parts
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeCentroids {
    dim: usize,
    centroids: Vec<f32>,
    exemplars: Vec<Occurrence>,
}

impl TypeCentroids {
    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn centroid(&self, k: usize) -> &[f32] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    pub fn centroids(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.centroids.chunks_exact(self.dim)
    }

    /// Occurrence closest to centroid `k`.
    pub fn exemplar(&self, k: usize) -> Occurrence {
        self.exemplars[k]
    }

    /// Index and squared distance of the centroid closest to `v`.
    pub fn nearest(&self, v: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centroids().enumerate() {
            let d = squared_distance(v, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BertGramIndex {
    dim: usize,
    k_max: usize,
    // indexed by token id
    types: Vec<Option<TypeCentroids>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
}

impl IndexConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        let d = KMeansConfig::new(k, seed);
        Self {
            k,
            seed,
            max_iters: d.max_iters,
            tol: d.tol,
        }
    }
}

fn type_seed(seed: u64, token: TokenId) -> u64 {
    // splitmix64 finalizer over (seed, token)
    let mut z = seed ^ (u64::from(token).wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn cluster_partition(part: &TypePartition, config: &IndexConfig) -> Result<TypeCentroids> {
    let km = KMeansConfig {
        k: config.k,
        seed: type_seed(config.seed, part.token),
        max_iters: config.max_iters,
        tol: config.tol,
    };
    let clustering = kmeans(&part.vectors, part.dim, &km)?;
    let k = clustering.k();
    let mut best: Vec<Option<(f64, usize)>> = vec![None; k];
    for (i, &c) in clustering.assignments.iter().enumerate() {
        let d = squared_distance(part.vector(i), clustering.centroid(c));
        if best[c].is_none_or(|(bd, _)| d < bd) {
            best[c] = Some((d, i));
        }
    }
    let exemplars = best
        .iter()
        .enumerate()
        .map(|(c, b)| {
            let member = b.map(|(_, i)| i).unwrap_or_else(|| {
                // cluster left empty at the iteration cap
                (0..part.len())
                    .min_by(|&a, &b| {
                        squared_distance(part.vector(a), clustering.centroid(c))
                            .total_cmp(&squared_distance(part.vector(b), clustering.centroid(c)))
                    })
                    .expect("partition is non-empty")
            });
            part.occurrences[member]
        })
        .collect();
    Ok(TypeCentroids {
        dim: part.dim,
        centroids: clustering.centroids,
        exemplars,
    })
}

/// Clusters every word type of `corpus` into at most `config.k` centroids.
/// Types are processed in parallel; the result depends only on the corpus and
/// the seed.
pub fn build_index(corpus: &EmbeddedCorpus, config: &IndexConfig) -> Result<BertGramIndex> {
    if config.k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if config.k > u32::MAX as usize {
        return Err(Error::InvalidParameter("K does not fit the index format".into()));
    }
    let parts: Vec<TypePartition> = partition_by_type(corpus).into_values().collect();
    let clustered = parts
        .par_iter()
        .map(|p| cluster_partition(p, config).map(|c| (p.token, c)))
        .collect::<Result<Vec<_>>>()?;
    let size = clustered.last().map_or(0, |(t, _)| *t as usize + 1);
    let mut types = vec![None; size];
    for (token, c) in clustered {
        types[token as usize] = Some(c);
    }
    Ok(BertGramIndex {
        dim: corpus.dim(),
        k_max: config.k,
        types,
    })
}

impl BertGramIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn get(&self, token: TokenId) -> Option<&TypeCentroids> {
        self.types.get(token as usize).and_then(Option::as_ref)
    }

    /// Token ids present in the index, ascending.
    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.types
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_some())
            .map(|(i, _)| i as TokenId)
    }

    pub fn num_types(&self) -> usize {
        self.types.iter().filter(|t| t.is_some()).count()
    }

    pub fn num_centroids(&self) -> usize {
        self.types.iter().flatten().map(TypeCentroids::len).sum()
    }

    /// Closest centroid of type `token` to `v`, or `None` when the type was
    /// never seen.
    pub fn nearest_centroid(&self, token: TokenId, v: &[f32]) -> Result<Option<(usize, f64)>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(self.get(token).map(|t| t.nearest(v)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        codec::put_u32(&mut out, VERSION);
        codec::put_u32(&mut out, self.dim as u32);
        codec::put_u32(&mut out, self.k_max as u32);
        codec::put_u32(&mut out, self.num_types() as u32);
        for (token, t) in self.types.iter().enumerate() {
            let Some(t) = t else { continue };
            codec::put_u32(&mut out, token as u32);
            codec::put_u32(&mut out, t.len() as u32);
            for k in 0..t.len() {
                codec::put_f32s(&mut out, t.centroid(k));
                codec::put_u64(&mut out, t.exemplars[k].seq_id);
                codec::put_u32(&mut out, t.exemplars[k].position);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let dim = r.u32()? as usize;
        let k_max = r.u32()? as usize;
        if dim == 0 || k_max == 0 {
            return Err(Error::Malformed("d and K_max must be positive".into()));
        }
        let raw_types = r.u32()?;
        let num_types = r.count(u64::from(raw_types), 8)?;
        let mut by_token: BTreeMap<TokenId, TypeCentroids> = BTreeMap::new();
        for _ in 0..num_types {
            let at = r.offset();
            let token = r.u32()?;
            let k = r.u32()? as usize;
            if k == 0 || k > k_max {
                return Err(Error::Malformed(format!(
                    "type {token} at byte offset {at} has {k} centroids (K_max {k_max})"
                )));
            }
            if token == PAD_ID {
                return Err(Error::Malformed(format!("PAD type at byte offset {at}")));
            }
            r.count(k as u64, 4 * dim + 12)?;
            let mut centroids = Vec::with_capacity(k * dim);
            let mut exemplars = Vec::with_capacity(k);
            for _ in 0..k {
                r.finite_f32s(dim, &mut centroids)?;
                let seq_id = r.u64()?;
                let position = r.u32()?;
                exemplars.push(Occurrence { seq_id, position });
            }
            let entry = TypeCentroids {
                dim,
                centroids,
                exemplars,
            };
            if by_token.insert(token, entry).is_some() {
                return Err(Error::Malformed(format!(
                    "duplicate type {token} at byte offset {at}"
                )));
            }
        }
        r.finish()?;
        let size = by_token.keys().next_back().map_or(0, |&t| t as usize + 1);
        let mut types = vec![None; size];
        for (token, c) in by_token {
            types[token as usize] = Some(c);
        }
        Ok(Self { dim, k_max, types })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&codec::read_file(path.as_ref())?)
    }
}
