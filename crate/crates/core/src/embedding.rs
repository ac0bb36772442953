//! Per-token contextual embeddings and the EMBD dump format.
//!
//! Layout (little-endian): magic `EMBD`, u32 version = 1, u32 d,
//! u64 num_sequences, then per sequence u64 seq_id, u32 T, T u32 token ids
//! and T*d f32 values in row-major order.

use std::collections::HashSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::codec::{self, Reader};
use crate::corpus::{Corpus, TokenId};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"EMBD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSequence {
    seq_id: u64,
    ids: Vec<TokenId>,
    dim: usize,
    vectors: Vec<f32>,
}

impl EmbeddedSequence {
    /// `vectors` holds `ids.len()` rows of `dim` values, row-major.
    pub fn new(seq_id: u64, ids: Vec<TokenId>, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        if ids.is_empty() {
            return Err(Error::Malformed(format!("sequence {seq_id} has no tokens")));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::LengthMismatch {
                left: ids.len() * dim,
                right: vectors.len(),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed(format!(
                "sequence {seq_id} contains a non-finite value"
            )));
        }
        Ok(Self {
            seq_id,
            ids,
            dim,
            vectors,
        })
    }

    pub fn seq_id(&self) -> u64 {
        self.seq_id
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, t: usize) -> &[f32] {
        &self.vectors[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedCorpus {
    dim: usize,
    sequences: Vec<EmbeddedSequence>,
}

impl EmbeddedCorpus {
    pub fn new(dim: usize, sequences: Vec<EmbeddedSequence>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(sequences.len());
        for s in &sequences {
            if s.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.dim,
                });
            }
            if !seen.insert(s.seq_id) {
                return Err(Error::Malformed(format!("duplicate seq_id {}", s.seq_id)));
            }
        }
        Ok(Self { dim, sequences })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sequences(&self) -> &[EmbeddedSequence] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(EmbeddedSequence::len).sum()
    }

    pub fn get(&self, seq_id: u64) -> Option<&EmbeddedSequence> {
        self.sequences.iter().find(|s| s.seq_id == seq_id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let floats: usize = self.sequences.iter().map(|s| s.vectors.len()).sum();
        let mut out = Vec::with_capacity(20 + 12 * self.sequences.len() + 4 * floats);
        out.extend_from_slice(&MAGIC);
        codec::put_u32(&mut out, VERSION);
        codec::put_u32(&mut out, self.dim as u32);
        codec::put_u64(&mut out, self.sequences.len() as u64);
        for s in &self.sequences {
            codec::put_u64(&mut out, s.seq_id);
            codec::put_u32(&mut out, s.ids.len() as u32);
            for &id in &s.ids {
                codec::put_u32(&mut out, id);
            }
            codec::put_f32s(&mut out, &s.vectors);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::Malformed("dimension field is zero".into()));
        }
        let raw = r.u64()?;
        let count = r.count(raw, 12)?;
        let mut sequences = Vec::with_capacity(count);
        let mut seen = HashSet::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            let seq_id = r.u64()?;
            let len = r.u32()? as usize;
            if len == 0 {
                return Err(Error::Malformed(format!(
                    "sequence {seq_id} at byte offset {at} has no tokens"
                )));
            }
            if !seen.insert(seq_id) {
                return Err(Error::Malformed(format!(
                    "duplicate seq_id {seq_id} at byte offset {at}"
                )));
            }
            let ids = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let mut vectors = Vec::new();
            r.finite_f32s(len * dim, &mut vectors)?;
            sequences.push(EmbeddedSequence {
                seq_id,
                ids,
                dim,
                vectors,
            });
        }
        r.finish()?;
        Ok(Self { dim, sequences })
    }
}

pub fn write_dump(corpus: &EmbeddedCorpus, path: impl AsRef<Path>) -> Result<()> {
    codec::write_file(path.as_ref(), &corpus.to_bytes())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<EmbeddedCorpus> {
    EmbeddedCorpus::from_bytes(&codec::read_file(path.as_ref())?)
}

/// Deterministic stand-in for a contextual encoder.
///
/// The vector at position `t` is a pseudo-random Gaussian direction seeded
/// by the token window `t-window ..= t+window` (slots past either end hold a
/// boundary marker), scaled to length `norm`. Equal windows give equal
/// vectors; a token influences exactly the positions within `window` of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticEmbedder {
    pub window: usize,
    pub dim: usize,
    pub seed: u64,
    pub norm: f32,
}

const BOUNDARY: u64 = u64::MAX;

impl SyntheticEmbedder {
    pub fn new(window: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParameter("synthetic embedding needs d >= 2".into()));
        }
        Ok(Self {
            window,
            dim,
            seed,
            norm: 1.0,
        })
    }

    pub fn with_norm(mut self, norm: f32) -> Result<Self> {
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidParameter(format!("norm must be positive, got {norm}")));
        }
        self.norm = norm;
        Ok(self)
    }

    fn window_hash(&self, ids: &[TokenId], t: usize) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.seed);
        h.write_u64(self.window as u64);
        for k in 0..=2 * self.window {
            let slot = (t + k).checked_sub(self.window).filter(|&i| i < ids.len());
            h.write_u64(slot.map_or(BOUNDARY, |i| u64::from(ids[i])));
        }
        h.finish()
    }

    /// Writes the vector for position `t` into `out` (length `dim`).
    pub fn embed_position(&self, ids: &[TokenId], t: usize, out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.dim);
        let mut rng = ChaCha8Rng::seed_from_u64(self.window_hash(ids, t));
        let mut buf = vec![0f64; self.dim];
        loop {
            for v in buf.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let len = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 1e-12 {
                let scale = f64::from(self.norm) / len;
                for (o, v) in out.iter_mut().zip(&buf) {
                    *o = (v * scale) as f32;
                }
                return;
            }
        }
    }

    pub fn embed(&self, seq_id: u64, ids: &[TokenId]) -> Result<EmbeddedSequence> {
        let mut vectors = vec![0f32; ids.len() * self.dim];
        for (t, row) in vectors.chunks_exact_mut(self.dim).enumerate() {
            self.embed_position(ids, t, row);
        }
        EmbeddedSequence::new(seq_id, ids.to_vec(), self.dim, vectors)
    }

    /// Embeds every sequence, using its corpus index as seq_id.
    pub fn embed_corpus(&self, corpus: &Corpus) -> Result<EmbeddedCorpus> {
        let sequences = corpus
            .sequences()
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.embed(i as u64, s.ids()))
            .collect::<Result<Vec<_>>>()?;
        EmbeddedCorpus::new(self.dim, sequences)
    }
}

/// 64-bit FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddedCorpus {
        let a = EmbeddedSequence::new(7, vec![1, 2], 3, vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.25])
            .unwrap();
        EmbeddedCorpus::new(3, vec![a]).unwrap()
    }

    #[test]
    fn dump_size_follows_layout() {
        // 20 header + 12 sequence header + 2*4 ids + 2*3*4 floats
        assert_eq!(sample().to_bytes().len(), 64);
    }

    #[test]
    fn empty_corpus_round_trips() {
        let empty = EmbeddedCorpus::new(4, vec![]).unwrap();
        let bytes = empty.to_bytes();
        assert_eq!(bytes.len(), 20);
        assert_eq!(EmbeddedCorpus::from_bytes(&bytes).unwrap(), empty);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.embdump");
        write_dump(&sample(), &path).unwrap();
        assert_eq!(read_dump(&path).unwrap(), sample());
        assert!(read_dump(dir.path().join("missing")).is_err());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            EmbeddedCorpus::from_bytes(&bad),
            Err(Error::BadMagic { found, .. }) if &found == b"XXXX"
        ));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(EmbeddedCorpus::from_bytes(&bad), Err(Error::UnsupportedVersion(9))));

        // cut inside the second float row
        match EmbeddedCorpus::from_bytes(&bytes[..58]) {
            Err(Error::Truncated { offset, needed }) => {
                assert_eq!(offset, 58);
                assert_eq!(needed, 6);
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut bad = bytes.clone();
        let at = 40 + 4; // second float
        bad[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddedCorpus::from_bytes(&bad),
            Err(Error::NonFinite { offset: 44 })
        ));
        bad[at..at + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(EmbeddedCorpus::from_bytes(&bad).is_err());
    }

    #[test]
    fn rejects_duplicate_ids_and_dim_mismatch() {
        let a = EmbeddedSequence::new(1, vec![0], 2, vec![0.0, 1.0]).unwrap();
        assert!(EmbeddedCorpus::new(2, vec![a.clone(), a.clone()]).is_err());
        assert!(EmbeddedCorpus::new(3, vec![a]).is_err());
        assert!(EmbeddedSequence::new(1, vec![0, 1], 2, vec![0.0; 3]).is_err());
        assert!(EmbeddedSequence::new(1, vec![0], 2, vec![f32::NAN, 0.0]).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_unit_norm() {
        let e = SyntheticEmbedder::new(2, 16, 42).unwrap();
        let ids = [3, 1, 4, 1, 5, 9, 2, 6];
        let a = e.embed(0, &ids).unwrap();
        let b = e.embed(0, &ids).unwrap();
        assert_eq!(a, b);
        for row in a.rows() {
            let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-6, "{n}");
        }
        let other = SyntheticEmbedder::new(2, 16, 43).unwrap().embed(0, &ids).unwrap();
        assert_ne!(a.vector(0), other.vector(0));
        assert!(SyntheticEmbedder::new(1, 1, 0).is_err());
    }

    #[test]
    fn synthetic_norm_scales() {
        let e = SyntheticEmbedder::new(1, 8, 1).unwrap().with_norm(4.0).unwrap();
        let s = e.embed(0, &[0, 1, 2]).unwrap();
        for row in s.rows() {
            let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 4.0).abs() < 1e-5);
        }
    }

    #[test]
    fn synthetic_locality_exhaustive() {
        let vocab = 3u32;
        for window in 0..3usize {
            let e = SyntheticEmbedder::new(window, 8, 5).unwrap();
            for t_len in 1..=6usize {
                let base: Vec<u32> = (0..t_len as u32).map(|i| i % vocab).collect();
                let emb = e.embed(0, &base).unwrap();
                for j in 0..t_len {
                    for r in 0..vocab {
                        if r == base[j] {
                            continue;
                        }
                        let mut p = base.clone();
                        p[j] = r;
                        let pe = e.embed(0, &p).unwrap();
                        for t in 0..t_len {
                            let same = emb.vector(t) == pe.vector(t);
                            assert_eq!(same, t.abs_diff(j) > window, "c={window} T={t_len} j={j} t={t}");
                        }
                    }
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn corpus_strategy() -> impl Strategy<Value = EmbeddedCorpus> {
            (1usize..6).prop_flat_map(|dim| {
                proptest::collection::vec(
                    proptest::collection::vec(
                        (0u32..50, proptest::collection::vec(-1e6f32..1e6, dim)),
                        1..6,
                    ),
                    0..5,
                )
                .prop_map(move |seqs| {
                    let sequences = seqs
                        .into_iter()
                        .enumerate()
                        .map(|(i, rows)| {
                            let ids = rows.iter().map(|r| r.0).collect();
                            let vectors = rows.into_iter().flat_map(|r| r.1).collect();
                            EmbeddedSequence::new(i as u64 * 3 + 1, ids, dim, vectors).unwrap()
                        })
                        .collect();
                    EmbeddedCorpus::new(dim, sequences).unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn dump_round_trip(corpus in corpus_strategy()) {
                let bytes = corpus.to_bytes();
                let back = EmbeddedCorpus::from_bytes(&bytes).unwrap();
                prop_assert_eq!(&back, &corpus);
                prop_assert_eq!(back.to_bytes(), bytes);
            }
        }
    }
}
