#![allow(dead_code)]

use std::path::PathBuf;

use bertgram_core::corpus::{Corpus, Sequence, Vocabulary};
use bertgram_core::embedding::{EmbeddedCorpus, EmbeddedSequence};

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Golden bytes, rewritten from `expected` when `BERTGRAM_BLESS` is set.
pub fn golden(name: &str, expected: &[u8]) -> Vec<u8> {
    let path = golden_path(name);
    if std::env::var_os("BERTGRAM_BLESS").is_some() {
        std::fs::write(&path, expected).unwrap();
    }
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Little-endian byte assembly, written independently of the library codecs.
#[derive(Default)]
pub struct Bytes(pub Vec<u8>);

impl Bytes {
    pub fn raw(mut self, b: &[u8]) -> Self {
        self.0.extend_from_slice(b);
        self
    }
    pub fn u32(self, v: u32) -> Self {
        self.raw(&v.to_le_bytes())
    }
    pub fn u64(self, v: u64) -> Self {
        self.raw(&v.to_le_bytes())
    }
    pub fn f32s(mut self, vs: &[f32]) -> Self {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        self
    }
}

pub fn ngram_fixture() -> Corpus {
    Corpus::new(
        vec![
            Sequence::new(vec![0, 1, 0]).unwrap(),
            Sequence::new(vec![1, 1, 2]).unwrap(),
        ],
        Vocabulary::synthetic(3),
    )
    .unwrap()
}

/// max counts: 1-grams {0:2, 1:2, 2:1}; 2-grams {01:1, 10:1, 11:1, 12:1}
pub fn ngram_golden_bytes() -> Vec<u8> {
    Bytes::default()
        .raw(b"NGTB")
        .u32(1)
        .u32(2)
        .u64(3)
        .u32(0).u32(2)
        .u32(1).u32(2)
        .u32(2).u32(1)
        .u64(4)
        .u32(0).u32(1).u32(1)
        .u32(1).u32(0).u32(1)
        .u32(1).u32(1).u32(1)
        .u32(1).u32(2).u32(1)
        .0
}

pub const EMBD_ROWS_A: [f32; 6] = [1.0, -0.5, 0.25, 0.0, 2.0, -3.0];
pub const EMBD_ROWS_B: [f32; 3] = [0.125, -8.0, 1.5];

pub fn embedding_fixture() -> EmbeddedCorpus {
    EmbeddedCorpus::new(
        3,
        vec![
            EmbeddedSequence::new(7, vec![0, 1], 3, EMBD_ROWS_A.to_vec()).unwrap(),
            EmbeddedSequence::new(9, vec![2], 3, EMBD_ROWS_B.to_vec()).unwrap(),
        ],
    )
    .unwrap()
}

pub fn embedding_golden_bytes() -> Vec<u8> {
    Bytes::default()
        .raw(b"EMBD")
        .u32(1)
        .u32(3)
        .u64(2)
        .u64(7)
        .u32(2)
        .u32(0)
        .u32(1)
        .f32s(&EMBD_ROWS_A)
        .u64(9)
        .u32(1)
        .u32(2)
        .f32s(&EMBD_ROWS_B)
        .0
}

/// Index over [`embedding_fixture`] with K_max = 4: every type occurs once,
/// so each has one centroid equal to its only vector.
pub fn index_golden_bytes() -> Vec<u8> {
    Bytes::default()
        .raw(b"BGIX")
        .u32(1)
        .u32(3)
        .u32(4)
        .u32(3)
        .u32(0)
        .u32(1)
        .f32s(&EMBD_ROWS_A[..3])
        .u64(7)
        .u32(0)
        .u32(1)
        .u32(1)
        .f32s(&EMBD_ROWS_A[3..])
        .u64(7)
        .u32(1)
        .u32(2)
        .u32(1)
        .f32s(&EMBD_ROWS_B)
        .u64(9)
        .u32(0)
        .0
}

/// Runs every documented corruption against a decoder and reports the first
/// case that was not rejected with the expected error.
pub fn check_rejections(
    golden: &[u8],
    decode: impl Fn(&[u8]) -> bertgram_core::Result<()>,
    float_offset: Option<usize>,
) -> Result<(), String> {
    use bertgram_core::Error;

    decode(golden).map_err(|e| format!("golden bytes rejected: {e}"))?;

    let mut bad = golden.to_vec();
    bad[..4].copy_from_slice(b"XXXX");
    match decode(&bad) {
        Err(Error::BadMagic { found, .. }) if &found == b"XXXX" => {}
        other => return Err(format!("bad magic: {other:?}")),
    }

    let mut bad = golden.to_vec();
    bad[4..8].copy_from_slice(&2u32.to_le_bytes());
    match decode(&bad) {
        Err(Error::UnsupportedVersion(2)) => {}
        other => return Err(format!("version 2: {other:?}")),
    }

    for cut in 0..golden.len() {
        match decode(&golden[..cut]) {
            Err(Error::Truncated { offset, needed }) if offset == cut && needed > 0 => {}
            other => return Err(format!("truncated at {cut}: {other:?}")),
        }
    }

    let mut long = golden.to_vec();
    long.push(0);
    match decode(&long) {
        Err(Error::Malformed(_)) => {}
        other => return Err(format!("trailing byte: {other:?}")),
    }

    if let Some(at) = float_offset {
        for v in [f32::NAN, f32::INFINITY, f32::NEG_INFINITY] {
            let mut bad = golden.to_vec();
            bad[at..at + 4].copy_from_slice(&v.to_le_bytes());
            match decode(&bad) {
                Err(Error::NonFinite { offset }) if offset == at => {}
                other => return Err(format!("{v} at {at}: {other:?}")),
            }
        }
    }
    Ok(())
}

pub mod formats {
    use super::*;
    use bertgram_core::embedding::EmbeddedCorpus;
    use bertgram_core::index::{build_index, BertGramIndex, IndexConfig};
    use bertgram_core::ngram::{build_max_count_table, MaxCountTable};

    /// Second float of the first sequence.
    pub const EMBD_FLOAT_OFFSET: usize = 44;
    /// Second float of the first centroid.
    pub const BGIX_FLOAT_OFFSET: usize = 32;

    pub fn check_ngtb() -> Result<(), String> {
        let golden = golden("fixture.ngtb", &ngram_golden_bytes());
        let table = build_max_count_table(&ngram_fixture(), 2).map_err(|e| e.to_string())?;
        if table.to_bytes() != golden {
            return Err("NGTB writer differs from golden bytes".into());
        }
        if MaxCountTable::from_bytes(&golden).map_err(|e| e.to_string())? != table {
            return Err("NGTB reader does not restore the table".into());
        }
        check_rejections(&golden, |b| MaxCountTable::from_bytes(b).map(drop), None)
    }

    pub fn check_embd() -> Result<(), String> {
        let golden = golden("fixture.embd", &embedding_golden_bytes());
        let corpus = embedding_fixture();
        if corpus.to_bytes() != golden {
            return Err("EMBD writer differs from golden bytes".into());
        }
        if EmbeddedCorpus::from_bytes(&golden).map_err(|e| e.to_string())? != corpus {
            return Err("EMBD reader does not restore the corpus".into());
        }
        check_rejections(
            &golden,
            |b| EmbeddedCorpus::from_bytes(b).map(drop),
            Some(EMBD_FLOAT_OFFSET),
        )
    }

    pub fn check_bgix() -> Result<(), String> {
        let golden = golden("fixture.bgix", &index_golden_bytes());
        let index = build_index(&embedding_fixture(), &IndexConfig::new(4, 0))
            .map_err(|e| e.to_string())?;
        if index.to_bytes() != golden {
            return Err("BGIX writer differs from golden bytes".into());
        }
        if BertGramIndex::from_bytes(&golden).map_err(|e| e.to_string())?.to_bytes() != golden {
            return Err("BGIX reader does not restore the index".into());
        }
        check_rejections(
            &golden,
            |b| BertGramIndex::from_bytes(b).map(drop),
            Some(BGIX_FLOAT_OFFSET),
        )
    }
}
