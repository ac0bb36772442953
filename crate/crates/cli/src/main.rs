//! `bertgram`: compile reward indices, score candidates, run the analyses
//! and train a tabular policy from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bertgram_core::reward::GAMMA_RANGE;

const FORMATS: &str = "\
File formats:
  vocabulary   one token per line; line i (0-based) is token id i
  corpus       one sequence per line, whitespace-separated vocabulary tokens;
               line i (0-based) is seq_id i
  EMBD         per-token embeddings (little-endian): magic EMBD, u32 version 1,
               u32 d, u64 sequences; per sequence u64 seq_id, u32 T, T x u32 ids,
               T*d x f32
  BGIX         centroid index: magic BGIX, u32 version 1, u32 d, u32 K_max,
               u32 types; per type u32 token, u32 k, then k x (d x f32 centroid,
               u64 exemplar seq_id, u32 exemplar position)
  NGTB         max-count n-gram table: magic NGTB, u32 version 1, u32 n_max;
               per order u64 entries, each n x u32 ids + u32 max count";

#[derive(Parser, Debug)]
#[command(name = "bertgram", version, about = "Contextual-embedding and n-gram rewards over condensed corpus indices", after_help = FORMATS)]
struct Cli {
    /// Worker threads for compilation and batch scoring [default: available cores]
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the max-count n-gram table (NGTB) of a reference corpus
    #[command(after_help = FORMATS)]
    CompileNgrams(CompileNgrams),
    /// Cluster per-token embeddings (EMBD) into a centroid index (BGIX)
    #[command(after_help = FORMATS)]
    CompileIndex(CompileIndex),
    /// Embed a corpus with the deterministic synthetic window embedder (EMBD)
    #[command(after_help = FORMATS)]
    EmbedSynthetic(EmbedSynthetic),
    /// Score embedded candidates with the mixed reward
    #[command(after_help = FORMATS)]
    Score(Score),
    /// Empirical analyses of an embedding space
    #[command(subcommand)]
    Analyze(Analyze),
    /// Pretrain a tabular policy by maximum likelihood, then fine-tune it with REINFORCE
    #[command(after_help = TRAIN_HELP)]
    Train(Train),
    /// Print the corpus sentence nearest to each centroid of a token
    #[command(after_help = FORMATS)]
    InspectCentroid(InspectCentroid),
}

#[derive(Subcommand, Debug)]
enum Analyze {
    /// Nearest corpus positions to one embedded position
    #[command(after_help = FORMATS)]
    Neighbors(Neighbors),
    /// Plan one single-token replacement per sequence and write the perturbed corpus
    #[command(after_help = FORMATS)]
    Perturb(Perturb),
    /// Position-by-position sensitivity matrix from original and perturbed embeddings
    #[command(after_help = FORMATS)]
    Sensitivity(Sensitivity),
    /// Anchor-aligned per-position reward comparison with t-tests
    #[command(after_help = ANCHOR_HELP)]
    Align(Align),
    /// Unique-sequence and distinct n-gram ratios of a batch
    #[command(after_help = FORMATS)]
    Diversity(Diversity),
}

const TRAIN_HELP: &str = "\
Config file: `key = value` lines, `#` starts a comment. Keys: beta, alpha,
gamma, mix_weight, batch_size, steps, pretrain_steps, learning_rate,
pretrain_learning_rate, context_order, credit (total | to-go), log_every.
A `seed` key is overridden by --seed.

Output: tab-separated trace with columns
step reward bert_reward ngram_reward entropy mean_len rho rho2 rho4";

const ANCHOR_HELP: &str = "\
Anchor files: one line per sequence, `seq_id<TAB>start<TAB>length`, with a
0-based start position. Sequences without an anchor line are skipped.

Output: tab-separated rows `offset mean_real mean_fake n_real n_fake t p`.";

fn gamma(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    let (lo, hi) = GAMMA_RANGE;
    if (lo..=hi).contains(&v) {
        Ok(v)
    } else {
        Err(format!("gamma must lie in [{lo}, {hi}]"))
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("value must lie in [0, 1]".into())
    }
}

fn positive_f32(s: &str) -> Result<f32, String> {
    let v: f32 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err("value must be positive".into())
    }
}

#[derive(Args, Debug)]
struct Out {
    /// Output path [default: standard output]
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompileNgrams {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Highest n-gram order
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=16))]
    n_max: u32,
    /// Output NGTB path
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct CompileIndex {
    /// Input EMBD dump
    #[arg(long)]
    embeddings: PathBuf,
    /// Maximum centroids per token type
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    #[arg(long)]
    seed: u64,
    /// Lloyd iteration cap
    #[arg(long, default_value_t = 25)]
    max_iters: usize,
    /// Stop when no centroid moves farther than this
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Output BGIX path
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EmbedSynthetic {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Context tokens on each side that determine a position's vector
    #[arg(long)]
    window: usize,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(2..))]
    dim: u32,
    /// Euclidean norm of every vector
    #[arg(long, default_value_t = 1.0, value_parser = positive_f32)]
    norm: f32,
    #[arg(long)]
    seed: u64,
    /// Output EMBD path
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct Score {
    /// BGIX index of the references
    #[arg(long)]
    index: PathBuf,
    /// NGTB table of the references
    #[arg(long)]
    ngrams: PathBuf,
    /// Embedded candidates (EMBD)
    #[arg(long)]
    candidates: PathBuf,
    /// RBF bandwidth
    #[arg(long, default_value_t = 0.06, value_parser = gamma, allow_hyphen_values = true)]
    gamma: f64,
    /// Weight of the embedding reward; the n-gram reward gets the rest
    #[arg(long, default_value_t = 0.25, value_parser = unit_interval, allow_hyphen_values = true)]
    mix: f64,
    /// Print per-position rewards: `seq_id<TAB>total<TAB>r_1,...,r_T`
    #[arg(long)]
    per_token: bool,
    #[command(flatten)]
    out: Out,
}

#[derive(Args, Debug)]
struct Neighbors {
    #[arg(long)]
    embeddings: PathBuf,
    /// Sequence holding the query position
    #[arg(long)]
    seq_id: u64,
    /// 0-based query position
    #[arg(long)]
    position: usize,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    /// Vocabulary for rendering sentences; ids are printed without it
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Keep only positions holding this token
    #[arg(long, conflicts_with = "exclude")]
    only: Option<String>,
    /// Skip positions holding this token
    #[arg(long)]
    exclude: Option<String>,
    #[command(flatten)]
    out: Out,
}

#[derive(Args, Debug)]
struct Perturb {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Perturbed corpus (text) to embed externally
    #[arg(long)]
    perturbed: PathBuf,
    /// Plan as `seq_id<TAB>position<TAB>replacement` with 0-based positions
    #[command(flatten)]
    out: Out,
}

#[derive(Args, Debug)]
struct Sensitivity {
    /// Embeddings of the original corpus
    #[arg(long)]
    original: PathBuf,
    /// Embeddings of the perturbed corpus, with matching seq_ids
    #[arg(long)]
    perturbed: PathBuf,
    /// Plan written by `analyze perturb`
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, default_value_t = 0.06, value_parser = gamma, allow_hyphen_values = true)]
    gamma: f64,
    #[command(flatten)]
    out: Out,
}

#[derive(Args, Debug)]
struct Align {
    /// BGIX index the rewards are computed against
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    fake: PathBuf,
    #[arg(long)]
    real_anchors: PathBuf,
    #[arg(long)]
    fake_anchors: PathBuf,
    #[arg(long, default_value_t = 0.06, value_parser = gamma, allow_hyphen_values = true)]
    gamma: f64,
    #[command(flatten)]
    out: Out,
}

#[derive(Args, Debug)]
struct Diversity {
    /// Batch of sequences, one per line
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Average per-sequence distinct n-gram ratios instead of pooling the batch
    #[arg(long)]
    per_sequence: bool,
    #[command(flatten)]
    out: Out,
}

#[derive(Args, Debug)]
struct Train {
    /// Training (and reference) corpus
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// `key = value` training configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Synthetic embedder window used for the embedding reward
    #[arg(long, default_value_t = 1)]
    window: usize,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(2..))]
    dim: u32,
    #[arg(long, default_value_t = 1.0, value_parser = positive_f32)]
    norm: f32,
    /// Centroids per token type in the reward index
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    k: u32,
    /// Highest n-gram order of the n-gram reward
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u32).range(1..=16))]
    n_max: u32,
    /// Write this many sequences sampled from the trained policy
    #[arg(long, requires = "samples_out", default_value_t = 0)]
    samples: usize,
    #[arg(long)]
    samples_out: Option<PathBuf>,
    #[command(flatten)]
    out: Out,
}

#[derive(Args, Debug)]
struct InspectCentroid {
    #[arg(long)]
    index: PathBuf,
    /// Corpus the index was compiled from
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Token whose centroids are shown
    #[arg(long)]
    token: String,
    /// Show only this centroid
    #[arg(long)]
    centroid: Option<usize>,
    #[command(flatten)]
    out: Out,
}

/// Failure classes that map onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<bertgram_core::Error> for Failure {
    fn from(e: bertgram_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| Failure::Data(e.into()))?;
    }
    match cli.command {
        Command::CompileNgrams(a) => commands::compile_ngrams(&a.corpus, &a.vocab, a.n_max as usize, &a.output),
        Command::CompileIndex(a) => commands::compile_index(&a.embeddings, a.k as usize, a.seed, a.max_iters, a.tol, &a.output),
        Command::EmbedSynthetic(a) => commands::embed_synthetic(&a.corpus, &a.vocab, a.window, a.dim as usize, a.norm, a.seed, &a.output),
        Command::Score(a) => commands::score(&a.index, &a.ngrams, &a.candidates, a.gamma, a.mix, a.per_token, a.out.output.as_deref()),
        Command::Analyze(Analyze::Neighbors(a)) => commands::neighbors(&commands::NeighborsArgs {
            embeddings: &a.embeddings,
            seq_id: a.seq_id,
            position: a.position,
            k: a.k as usize,
            vocab: a.vocab.as_deref(),
            only: a.only.as_deref(),
            exclude: a.exclude.as_deref(),
            output: a.out.output.as_deref(),
        }),
        Command::Analyze(Analyze::Perturb(a)) => commands::perturb(&a.corpus, &a.vocab, a.seed, &a.perturbed, a.out.output.as_deref()),
        Command::Analyze(Analyze::Sensitivity(a)) => commands::sensitivity(&a.original, &a.perturbed, &a.plan, a.gamma, a.out.output.as_deref()),
        Command::Analyze(Analyze::Align(a)) => commands::align(&commands::AlignArgs {
            index: &a.index,
            real: &a.real,
            fake: &a.fake,
            real_anchors: &a.real_anchors,
            fake_anchors: &a.fake_anchors,
            gamma: a.gamma,
            output: a.out.output.as_deref(),
        }),
        Command::Analyze(Analyze::Diversity(a)) => commands::diversity(&a.corpus, &a.vocab, a.per_sequence, a.out.output.as_deref()),
        Command::Train(a) => commands::train(&commands::TrainArgs {
            corpus: &a.corpus,
            vocab: &a.vocab,
            config: a.config.as_deref(),
            seed: a.seed,
            window: a.window,
            dim: a.dim as usize,
            norm: a.norm,
            k: a.k as usize,
            n_max: a.n_max as usize,
            samples: a.samples,
            samples_out: a.samples_out.as_deref(),
            output: a.out.output.as_deref(),
        }),
        Command::InspectCentroid(a) => commands::inspect_centroid(&a.index, &a.corpus, &a.vocab, &a.token, a.centroid, a.out.output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
