use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use bertgram_core::analysis::{
    aligned_comparison, apply_plan, diversity_metrics, nearest_neighbors, perturb_plan,
    sensitivity_matrix, AnchoredRewards, NgramScope, PerturbedPair, TokenFilter,
};
use bertgram_core::corpus::{fuse_word_pieces, length_distribution, load_corpus, Corpus, TokenId, Vocabulary};
use bertgram_core::embedding::{read_dump, write_dump, EmbeddedCorpus, EmbeddedSequence, SyntheticEmbedder};
use bertgram_core::index::{build_index, BertGramIndex, IndexConfig};
use bertgram_core::ngram::{build_max_count_table, shaped_increments, BleuParams, MaxCountTable};
use bertgram_core::reward::{indexed_reward, mixed_reward};
use bertgram_core::rl::{self, RewardModel, TrainConfig};

use crate::output::emit;
use crate::Failure;

type Outcome = Result<(), Failure>;

fn corpus_with_vocab(corpus: &Path, vocab: &Path) -> anyhow::Result<Corpus> {
    let vocab = Vocabulary::load(vocab)?;
    Ok(load_corpus(corpus, vocab)?)
}

fn token_id(vocab: &Vocabulary, token: &str) -> anyhow::Result<TokenId> {
    vocab
        .id(token)
        .ok_or_else(|| anyhow!("token {token:?} is not in the vocabulary"))
}

fn sentence(vocab: Option<&Vocabulary>, ids: &[TokenId]) -> String {
    match vocab {
        Some(v) => fuse_word_pieces(&v.render(ids)),
        None => ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
    }
}

pub fn compile_ngrams(corpus: &Path, vocab: &Path, n_max: usize, output: &Path) -> Outcome {
    let corpus = corpus_with_vocab(corpus, vocab)?;
    let table = build_max_count_table(&corpus, n_max)?;
    table.write(output)?;
    let entries: usize = (1..=n_max).filter_map(|n| table.order(n)).map(HashMap::len).sum();
    eprintln!("{} sequences, {entries} n-grams up to order {n_max}", corpus.len());
    Ok(())
}

pub fn compile_index(embeddings: &Path, k: usize, seed: u64, max_iters: usize, tol: f64, output: &Path) -> Outcome {
    if max_iters == 0 || !(tol.is_finite() && tol >= 0.0) {
        return Err(Failure::Usage("--max-iters must be positive and --tol non-negative".into()));
    }
    let corpus = read_dump(embeddings)?;
    let config = IndexConfig { k, seed, max_iters, tol };
    let index = build_index(&corpus, &config)?;
    index.write(output)?;
    eprintln!(
        "{} types, {} centroids, d = {}",
        index.num_types(),
        index.num_centroids(),
        index.dim()
    );
    Ok(())
}

pub fn embed_synthetic(corpus: &Path, vocab: &Path, window: usize, dim: usize, norm: f32, seed: u64, output: &Path) -> Outcome {
    let corpus = corpus_with_vocab(corpus, vocab)?;
    let embedder = SyntheticEmbedder::new(window, dim, seed)?.with_norm(norm)?;
    write_dump(&embedder.embed_corpus(&corpus)?, output)?;
    Ok(())
}

pub fn score(
    index: &Path,
    ngrams: &Path,
    candidates: &Path,
    gamma: f64,
    mix: f64,
    per_token: bool,
    output: Option<&Path>,
) -> Outcome {
    let index = BertGramIndex::read(index)?;
    let table = MaxCountTable::read(ngrams)?;
    let cands = read_dump(candidates)?;
    if cands.dim() != index.dim() {
        return Err(anyhow!(
            "{}: embeddings have d = {} but the index has d = {}",
            candidates.display(),
            cands.dim(),
            index.dim()
        )
        .into());
    }
    let params = BleuParams::uniform(table.n_max());
    let lines = cands
        .sequences()
        .par_iter()
        .map(|s| -> anyhow::Result<String> {
            let bert = indexed_reward(s.ids(), s, &index, gamma)?;
            let inc = shaped_increments(s.ids(), &table, &params)?;
            let mixed = mixed_reward(&bert, &inc, mix)?;
            let mut line = format!("{}\t{:.6}", s.seq_id(), mixed.total);
            if per_token {
                let cells: Vec<String> = mixed.per_position.iter().map(|r| format!("{r:.6}")).collect();
                line.push('\t');
                line.push_str(&cells.join(","));
            }
            line.push('\n');
            Ok(line)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    emit(output, &lines.concat())?;
    Ok(())
}

pub struct NeighborsArgs<'a> {
    pub embeddings: &'a Path,
    pub seq_id: u64,
    pub position: usize,
    pub k: usize,
    pub vocab: Option<&'a Path>,
    pub only: Option<&'a str>,
    pub exclude: Option<&'a str>,
    pub output: Option<&'a Path>,
}

pub fn neighbors(a: &NeighborsArgs<'_>) -> Outcome {
    let corpus = read_dump(a.embeddings)?;
    let vocab = a.vocab.map(Vocabulary::load).transpose()?;
    let filter = match (a.only, a.exclude) {
        (None, None) => TokenFilter::Any,
        (Some(t), None) | (None, Some(t)) => {
            let vocab = vocab
                .as_ref()
                .ok_or_else(|| Failure::Usage("--only and --exclude need --vocab".into()))?;
            let id = token_id(vocab, t)?;
            if a.only.is_some() {
                TokenFilter::Only(id)
            } else {
                TokenFilter::Exclude(id)
            }
        }
        (Some(_), Some(_)) => return Err(Failure::Usage("--only conflicts with --exclude".into())),
    };
    let seq = corpus
        .get(a.seq_id)
        .ok_or_else(|| anyhow!("{}: no sequence with seq_id {}", a.embeddings.display(), a.seq_id))?;
    if a.position >= seq.len() {
        return Err(anyhow!("sequence {} has {} positions; {} is out of range", a.seq_id, seq.len(), a.position).into());
    }
    let hits = nearest_neighbors(&corpus, seq.vector(a.position), a.k, filter)?;
    let mut out = String::from("rank\tdistance\tseq_id\tposition\ttoken\tsentence\n");
    for (rank, h) in hits.iter().enumerate() {
        let ids = corpus.get(h.seq_id).expect("hit comes from the corpus").ids();
        let token = match &vocab {
            Some(v) => v.render(&[h.token]).remove(0),
            None => h.token.to_string(),
        };
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{}\t{}\t{}\t{}",
            rank + 1,
            h.squared_distance,
            h.seq_id,
            h.position,
            token,
            sentence(vocab.as_ref(), ids)
        );
    }
    emit(a.output, &out)?;
    Ok(())
}

pub fn perturb(corpus: &Path, vocab: &Path, seed: u64, perturbed: &Path, output: Option<&Path>) -> Outcome {
    let corpus = corpus_with_vocab(corpus, vocab)?;
    let plan = perturb_plan(&corpus, seed);
    let changed = apply_plan(&corpus, &plan)?;
    std::fs::write(perturbed, changed.to_text()).with_context(|| format!("writing {}", perturbed.display()))?;
    let mut out = String::from("seq_id\tposition\treplacement\n");
    for p in &plan {
        let token = corpus.vocabulary().render(&[p.replacement]).remove(0);
        let _ = writeln!(out, "{}\t{}\t{}", p.seq_id, p.position, token);
    }
    emit(output, &out)?;
    Ok(())
}

/// `(seq_id, position)` pairs from a plan file written by `perturb`.
fn read_plan(path: &Path) -> anyhow::Result<Vec<(u64, usize)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut plan = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("seq_id") || line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let seq: Option<u64> = cols.next().and_then(|c| c.trim().parse().ok());
        let pos: Option<usize> = cols.next().and_then(|c| c.trim().parse().ok());
        match (seq, pos) {
            (Some(s), Some(p)) => plan.push((s, p)),
            _ => bail!("{}:{}: expected seq_id<TAB>position", path.display(), i + 1),
        }
    }
    Ok(plan)
}

fn lookup<'c>(c: &'c EmbeddedCorpus, path: &Path, id: u64) -> anyhow::Result<&'c EmbeddedSequence> {
    c.get(id)
        .ok_or_else(|| anyhow!("{}: no sequence with seq_id {id}", path.display()))
}

pub fn sensitivity(original: &Path, perturbed: &Path, plan: &Path, gamma: f64, output: Option<&Path>) -> Outcome {
    let a = read_dump(original)?;
    let b = read_dump(perturbed)?;
    let plan = read_plan(plan)?;
    let mut pairs = Vec::with_capacity(plan.len());
    for &(seq_id, position) in &plan {
        pairs.push(PerturbedPair {
            original: lookup(&a, original, seq_id)?,
            perturbed: lookup(&b, perturbed, seq_id)?,
            position,
        });
    }
    let m = sensitivity_matrix(&pairs, gamma)?;
    emit(output, &m.to_text())?;
    Ok(())
}

pub struct AlignArgs<'a> {
    pub index: &'a Path,
    pub real: &'a Path,
    pub fake: &'a Path,
    pub real_anchors: &'a Path,
    pub fake_anchors: &'a Path,
    pub gamma: f64,
    pub output: Option<&'a Path>,
}

fn read_anchors(path: &Path) -> anyhow::Result<HashMap<u64, (usize, usize)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut anchors = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let parsed = match cols.as_slice() {
            [s, start, len] => s.parse().ok().zip(start.parse().ok()).zip(len.parse().ok()),
            _ => None,
        };
        let Some(((seq, start), len)) = parsed else {
            bail!("{}:{}: expected seq_id<TAB>start<TAB>length", path.display(), i + 1);
        };
        if anchors.insert(seq, (start, len)).is_some() {
            bail!("{}:{}: second anchor for seq_id {seq}", path.display(), i + 1);
        }
    }
    Ok(anchors)
}

fn anchored(index: &BertGramIndex, dump: &Path, anchors: &Path, gamma: f64) -> anyhow::Result<Vec<AnchoredRewards>> {
    let corpus = read_dump(dump)?;
    let anchors = read_anchors(anchors)?;
    let mut out = Vec::new();
    for s in corpus.sequences() {
        let Some(&(start, len)) = anchors.get(&s.seq_id()) else {
            continue;
        };
        let r = indexed_reward(s.ids(), s, index, gamma)?;
        out.push(
            AnchoredRewards::new(r.per_position, start, len)
                .with_context(|| format!("{}: seq_id {}", dump.display(), s.seq_id()))?,
        );
    }
    Ok(out)
}

pub fn align(a: &AlignArgs<'_>) -> Outcome {
    let index = BertGramIndex::read(a.index)?;
    let real = anchored(&index, a.real, a.real_anchors, a.gamma)?;
    let fake = anchored(&index, a.fake, a.fake_anchors, a.gamma)?;
    emit(a.output, &aligned_comparison(&real, &fake).to_tsv())?;
    Ok(())
}

pub fn diversity(corpus: &Path, vocab: &Path, per_sequence: bool, output: Option<&Path>) -> Outcome {
    let corpus = corpus_with_vocab(corpus, vocab)?;
    let scope = if per_sequence { NgramScope::PerSequence } else { NgramScope::Batch };
    let m = diversity_metrics(corpus.sequences(), scope);
    emit(
        output,
        &format!(
            "rho\trho2\trho4\tmean_len\n{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
            m.rho, m.rho_2, m.rho_4, m.mean_length
        ),
    )?;
    Ok(())
}

pub struct TrainArgs<'a> {
    pub corpus: &'a Path,
    pub vocab: &'a Path,
    pub config: Option<&'a Path>,
    pub seed: u64,
    pub window: usize,
    pub dim: usize,
    pub norm: f32,
    pub k: usize,
    pub n_max: usize,
    pub samples: usize,
    pub samples_out: Option<&'a Path>,
    pub output: Option<&'a Path>,
}

pub fn train(a: &TrainArgs<'_>) -> Outcome {
    let mut config = match a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::parse(&text).with_context(|| format!("{}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    config.seed = a.seed;
    let corpus = corpus_with_vocab(a.corpus, a.vocab)?;
    let embedder = SyntheticEmbedder::new(a.window, a.dim, a.seed)?.with_norm(a.norm)?;
    let index = build_index(&embedder.embed_corpus(&corpus)?, &IndexConfig::new(a.k, a.seed))?;
    let table = build_max_count_table(&corpus, a.n_max)?;
    let model = RewardModel {
        table: &table,
        bleu: BleuParams::uniform(a.n_max),
        index: &index,
        embedder,
    };
    let (policy, trace) = rl::train(&config, &corpus, &model)?;
    emit(a.output, &trace.to_tsv())?;
    if let Some(path) = a.samples_out {
        let lengths = length_distribution(&corpus);
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x5eed);
        let mut text = String::new();
        for _ in 0..a.samples {
            let s = policy.sample(&lengths, &mut rng);
            text.push_str(&corpus.vocabulary().render(&s.ids).join(" "));
            text.push('\n');
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn inspect_centroid(index: &Path, corpus: &Path, vocab: &Path, token: &str, centroid: Option<usize>, output: Option<&Path>) -> Outcome {
    let index = BertGramIndex::read(index)?;
    let corpus = corpus_with_vocab(corpus, vocab)?;
    let id = token_id(corpus.vocabulary(), token)?;
    let types = index
        .get(id)
        .ok_or_else(|| anyhow!("token {token:?} does not occur in the index"))?;
    let ks: Vec<usize> = match centroid {
        Some(k) if k < types.len() => vec![k],
        Some(k) => {
            return Err(anyhow!("token {token:?} has {} centroids; {k} is out of range", types.len()).into())
        }
        None => (0..types.len()).collect(),
    };
    let mut out = String::from("centroid\tseq_id\tposition\tsentence\n");
    for k in ks {
        let ex = types.exemplar(k);
        let seq = usize::try_from(ex.seq_id)
            .ok()
            .and_then(|i| corpus.sequences().get(i))
            .ok_or_else(|| anyhow!("exemplar seq_id {} is not a line of the corpus", ex.seq_id))?;
        let _ = writeln!(
            out,
            "{k}\t{}\t{}\t{}",
            ex.seq_id,
            ex.position,
            sentence(Some(corpus.vocabulary()), seq.ids())
        );
    }
    emit(output, &out)?;
    Ok(())
}
