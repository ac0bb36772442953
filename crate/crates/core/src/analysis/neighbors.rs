use crate::corpus::TokenId;
use crate::embedding::EmbeddedCorpus;
use crate::error::{Error, Result};
use crate::kmeans::squared_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TokenFilter {
    #[default]
    Any,
    /// Only positions holding this token.
    Only(TokenId),
    /// Skip positions holding this token.
    Exclude(TokenId),
}

impl TokenFilter {
    fn admits(&self, id: TokenId) -> bool {
        match *self {
            TokenFilter::Any => true,
            TokenFilter::Only(w) => id == w,
            TokenFilter::Exclude(w) => id != w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub token: TokenId,
    pub seq_id: u64,
    pub position: usize,
    pub squared_distance: f64,
}

/// The `k` corpus positions closest to `query`, nearest first. Ties keep
/// corpus order.
pub fn nearest_neighbors(
    corpus: &EmbeddedCorpus,
    query: &[f32],
    k: usize,
    filter: TokenFilter,
) -> Result<Vec<Neighbor>> {
    if corpus.token_count() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if query.len() != corpus.dim() {
        return Err(Error::DimensionMismatch {
            expected: corpus.dim(),
            got: query.len(),
        });
    }
    let mut hits: Vec<Neighbor> = corpus
        .sequences()
        .iter()
        .flat_map(|s| {
            s.ids()
                .iter()
                .zip(s.rows())
                .enumerate()
                .filter(|(_, (&id, _))| filter.admits(id))
                .map(move |(t, (&id, row))| Neighbor {
                    token: id,
                    seq_id: s.seq_id(),
                    position: t,
                    squared_distance: squared_distance(query, row),
                })
        })
        .collect();
    hits.sort_by(|a, b| a.squared_distance.total_cmp(&b.squared_distance));
    hits.truncate(k);
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Sequence, Vocabulary};
    use crate::embedding::SyntheticEmbedder;

    fn embedded() -> EmbeddedCorpus {
        let seqs = [[0u32, 1, 2], [2, 1, 0], [3, 1, 3]]
            .iter()
            .map(|s| Sequence::new(s.to_vec()).unwrap())
            .collect();
        let corpus = Corpus::new(seqs, Vocabulary::synthetic(4)).unwrap();
        SyntheticEmbedder::new(1, 8, 3).unwrap().embed_corpus(&corpus).unwrap()
    }

    #[test]
    fn finds_itself_first() {
        let c = embedded();
        let q = c.sequences()[1].vector(2).to_vec();
        let hits = nearest_neighbors(&c, &q, 1, TokenFilter::Any).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!((hits[0].seq_id, hits[0].position), (1, 2));
        assert_eq!(hits[0].squared_distance, 0.0);
    }

    #[test]
    fn saturates_and_sorts() {
        let c = embedded();
        let q = vec![0.0; 8];
        let hits = nearest_neighbors(&c, &q, 100, TokenFilter::Any).unwrap();
        assert_eq!(hits.len(), 9);
        assert!(hits.windows(2).all(|w| w[0].squared_distance <= w[1].squared_distance));
    }

    #[test]
    fn filters() {
        let c = embedded();
        let q = c.sequences()[0].vector(1).to_vec();
        let only = nearest_neighbors(&c, &q, 10, TokenFilter::Only(1)).unwrap();
        assert_eq!(only.len(), 3);
        assert!(only.iter().all(|h| h.token == 1));
        let excl = nearest_neighbors(&c, &q, 10, TokenFilter::Exclude(1)).unwrap();
        assert_eq!(excl.len(), 6);
        assert!(excl.iter().all(|h| h.token != 1));
    }

    #[test]
    fn errors() {
        let c = embedded();
        assert!(nearest_neighbors(&c, &[0.0; 3], 1, TokenFilter::Any).is_err());
        assert!(nearest_neighbors(&c, &[0.0; 8], 0, TokenFilter::Any).is_err());
        let empty = EmbeddedCorpus::new(8, vec![]).unwrap();
        assert!(matches!(
            nearest_neighbors(&empty, &[0.0; 8], 1, TokenFilter::Any),
            Err(Error::EmptyCorpus)
        ));
    }
}
