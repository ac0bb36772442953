//! Tokenized sequences, vocabulary, n-gram extraction and the empirical
//! length distribution.
//!
//! Tokenization happens upstream: corpus files hold one sequence per line
//! with tokens separated by single spaces, and the vocabulary file holds one
//! token per line (line number = id).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Reserved padding id. It lies outside every loadable vocabulary range.
pub const PAD_ID: TokenId = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    id_of: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() >= PAD_ID as usize {
            return Err(Error::Vocabulary("too many tokens".into()));
        }
        let mut id_of = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Vocabulary(format!(
                    "line {}: token {tok:?} is empty or contains whitespace",
                    i + 1
                )));
            }
            if id_of.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::Vocabulary(format!(
                    "line {}: duplicate token {tok:?}",
                    i + 1
                )));
            }
        }
        Ok(Self { tokens, id_of })
    }

    /// A vocabulary of `size` placeholder tokens `t0, t1, …`.
    pub fn synthetic(size: usize) -> Self {
        Self::from_tokens((0..size).map(|i| format!("t{i}")))
            .expect("synthetic tokens are unique")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn pad_id(&self) -> TokenId {
        PAD_ID
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    /// Renders ids as text, mapping PAD to `<pad>` and unknown ids to `<id>`.
    pub fn render(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| match self.token(id) {
                Some(t) => t.to_string(),
                None if id == PAD_ID => "<pad>".to_string(),
                None => format!("<{id}>"),
            })
            .collect()
    }
}

/// Joins word pieces for display: a token starting with `##` is glued to
/// its predecessor.
pub fn fuse_word_pieces<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for tok in tokens {
        let tok = tok.as_ref();
        match tok.strip_prefix("##") {
            Some(rest) if !out.is_empty() => out.push_str(rest),
            _ => {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(tok);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence {
    ids: Vec<TokenId>,
}

impl Sequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Malformed("sequence must contain at least one token".into()));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.ids
    }
}

impl AsRef<[TokenId]> for Sequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.ids
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sequences: Vec<Sequence>,
    vocabulary: Vocabulary,
}

impl Corpus {
    pub fn new(sequences: Vec<Sequence>, vocabulary: Vocabulary) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        for (i, seq) in sequences.iter().enumerate() {
            if let Some(&bad) = seq
                .ids()
                .iter()
                .find(|&&id| id != PAD_ID && !vocabulary.contains_id(id))
            {
                return Err(Error::Malformed(format!(
                    "sequence {i}: token id {bad} outside vocabulary of size {}",
                    vocabulary.len()
                )));
            }
        }
        Ok(Self {
            sequences,
            vocabulary,
        })
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    /// Serializes in the corpus text format accepted by [`load_corpus`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seq in &self.sequences {
            out.push_str(&self.vocabulary.render(seq.ids()).join(" "));
            out.push('\n');
        }
        out
    }

    /// Occurrence count of every vocabulary id, indexed by id.
    pub fn unigram_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.vocabulary.len()];
        for seq in &self.sequences {
            for &id in seq.ids() {
                if let Some(c) = counts.get_mut(id as usize) {
                    *c += 1;
                }
            }
        }
        counts
    }
}

pub fn parse_corpus(text: &str, vocabulary: Vocabulary) -> Result<Corpus> {
    let mut sequences = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut ids = Vec::new();
        for token in line.split_whitespace() {
            let id = vocabulary.id(token).ok_or_else(|| Error::UnknownToken {
                line: lineno + 1,
                token: token.to_string(),
            })?;
            ids.push(id);
        }
        if ids.is_empty() {
            return Err(Error::Malformed(format!("line {}: empty sequence", lineno + 1)));
        }
        sequences.push(Sequence { ids });
    }
    Corpus::new(sequences, vocabulary)
}

pub fn load_corpus(path: impl AsRef<Path>, vocabulary: Vocabulary) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, vocabulary)
}

/// Counts of every n-gram of `ids`, keyed by borrowed windows.
pub fn ngram_counts(ids: &[TokenId], n: usize) -> HashMap<&[TokenId], u32> {
    assert!(n >= 1, "n-gram order must be at least 1");
    let mut counts = HashMap::new();
    if ids.len() >= n {
        for w in ids.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Multiset of n-grams of `seq` with their counts.
pub fn ngrams(seq: &Sequence, n: usize) -> HashMap<Vec<TokenId>, u32> {
    ngram_counts(seq.ids(), n)
        .into_iter()
        .map(|(k, v)| (k.to_vec(), v))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthDistribution {
    probs: BTreeMap<usize, f64>,
}

impl LengthDistribution {
    pub fn from_lengths<I: IntoIterator<Item = usize>>(lengths: I) -> Result<Self> {
        let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
        let mut total = 0u64;
        for l in lengths {
            if l == 0 {
                return Err(Error::InvalidParameter("zero length".into()));
            }
            *counts.entry(l).or_insert(0) += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }
        let probs = counts
            .into_iter()
            .map(|(l, c)| (l, c as f64 / total as f64))
            .collect();
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &BTreeMap<usize, f64> {
        &self.probs
    }

    pub fn prob(&self, length: usize) -> f64 {
        self.probs.get(&length).copied().unwrap_or(0.0)
    }

    /// Largest length with non-zero probability.
    pub fn max_length(&self) -> usize {
        *self.probs.keys().next_back().expect("non-empty by construction")
    }
}

pub fn length_distribution(corpus: &Corpus) -> LengthDistribution {
    LengthDistribution::from_lengths(corpus.sequences().iter().map(Sequence::len))
        .expect("corpus is non-empty and sequences have T >= 1")
}
