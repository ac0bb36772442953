//! Condensed reward indices for sequence generation.
//!
//! A reference corpus is compiled once into a clipped n-gram max-count table
//! ([`ngram::MaxCountTable`]) and a per-word-type centroid index over
//! contextual embeddings ([`index::BertGramIndex`]). Candidates are then
//! scored position by position against those indices, at a cost that does
//! not depend on how many references went in.

mod codec;

pub mod analysis;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod index;
pub mod kmeans;
pub mod ngram;
pub mod reward;
pub mod rl;

pub use error::{Error, Result};
