use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::diversity::{diversity_metrics, NgramScope};
use crate::corpus::{length_distribution, Corpus, LengthDistribution, TokenId};
use crate::embedding::SyntheticEmbedder;
use crate::error::{Error, Result};
use crate::index::BertGramIndex;
use crate::ngram::{bleu, shaped_increments, BleuParams, MaxCountTable};
use crate::reward::{indexed_reward, mixed_reward};

use super::policy::{entropy_grad, log_prob_grad, Context, Sampled, TabularPolicy};

/// Position-dependent entropy weight `beta * t^-alpha` for 1-based `t`.
pub fn entropy_schedule(beta: f64, alpha: f64, t: usize) -> f64 {
    assert!(t >= 1, "positions are 1-based");
    if alpha == 0.0 {
        return beta;
    }
    beta * (t as f64).powf(-alpha)
}

/// How a sampled step is credited in the policy-gradient term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Credit {
    /// Sequence total minus the batch-mean total.
    #[default]
    Total,
    /// Sum of rewards from this step on, minus the batch mean of that sum at
    /// the same position.
    RewardToGo,
}

impl FromStr for Credit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(Credit::Total),
            "to-go" | "reward-to-go" => Ok(Credit::RewardToGo),
            other => Err(Error::InvalidParameter(format!("unknown credit mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub beta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub mix_weight: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub pretrain_steps: usize,
    pub learning_rate: f64,
    pub pretrain_learning_rate: f64,
    pub seed: u64,
    pub context_order: usize,
    pub credit: Credit,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.0065,
            alpha: 0.75,
            gamma: 0.06,
            mix_weight: 0.25,
            batch_size: 64,
            steps: 2000,
            pretrain_steps: 200,
            learning_rate: 1.0,
            pretrain_learning_rate: 1.0,
            seed: 0,
            context_order: 2,
            credit: Credit::Total,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be non-negative");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(0.0..=1.0).contains(&self.mix_weight) {
            return bad("mix_weight must lie in [0, 1]");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.pretrain_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unlisted keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidParameter(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "beta" => self.beta = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "mix_weight" => self.mix_weight = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "pretrain_steps" => self.pretrain_steps = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "pretrain_learning_rate" => self.pretrain_learning_rate = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "context_order" => self.context_order = num(key, value)?,
            "credit" => self.credit = value.parse()?,
            "log_every" => self.log_every = num(key, value)?,
            other => return Err(Error::InvalidParameter(format!("unknown key {other:?}"))),
        }
        Ok(())
    }
}

/// A sampled sequence with its per-position (mixed) rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub sample: Sampled,
    pub rewards: Vec<f64>,
}

impl ScoredSample {
    /// Mean per-position reward; exactly the common value when all are equal.
    pub fn total(&self) -> f64 {
        if self.rewards.is_empty() {
            0.0
        } else {
            anchored_mean(&self.rewards)
        }
    }
}

/// Mean that is exact when all values are equal.
fn anchored_mean(xs: &[f64]) -> f64 {
    let x0 = xs[0];
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Ascent directions on the logits, split into the policy-gradient and the
/// entropy-regularizer contributions. Both are averaged over the batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub policy: HashMap<Context, Vec<f64>>,
    pub entropy: HashMap<Context, Vec<f64>>,
}

impl Gradient {
    pub fn max_abs(term: &HashMap<Context, Vec<f64>>) -> f64 {
        term.values()
            .flat_map(|row| row.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn credits(batch: &[ScoredSample], mode: Credit) -> Vec<Vec<f64>> {
    match mode {
        Credit::Total => {
            let totals: Vec<f64> = batch.iter().map(ScoredSample::total).collect();
            let baseline = anchored_mean(&totals);
            batch
                .iter()
                .zip(&totals)
                .map(|(s, &r)| vec![r - baseline; s.sample.ids.len()])
                .collect()
        }
        Credit::RewardToGo => {
            let to_go: Vec<Vec<f64>> = batch
                .iter()
                .map(|s| {
                    let mut acc = 0.0;
                    let mut out: Vec<f64> = s
                        .rewards
                        .iter()
                        .rev()
                        .map(|r| {
                            acc += r;
                            acc
                        })
                        .collect();
                    out.reverse();
                    out
                })
                .collect();
            let max_len = to_go.iter().map(Vec::len).max().unwrap_or(0);
            let baselines: Vec<f64> = (0..max_len)
                .map(|t| {
                    let at: Vec<f64> = to_go.iter().filter_map(|g| g.get(t).copied()).collect();
                    anchored_mean(&at)
                })
                .collect();
            to_go
                .into_iter()
                .map(|g| g.iter().enumerate().map(|(t, v)| v - baselines[t]).collect())
                .collect()
        }
    }
}

pub fn reinforce_gradient(
    policy: &TabularPolicy,
    batch: &[ScoredSample],
    config: &TrainConfig,
) -> Result<Gradient> {
    if batch.len() < 2 {
        return Err(Error::InvalidParameter(
            "a batch needs at least two samples for the mean baseline".into(),
        ));
    }
    for s in batch {
        if s.rewards.len() != s.sample.ids.len() {
            return Err(Error::LengthMismatch {
                left: s.sample.ids.len(),
                right: s.rewards.len(),
            });
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let credit = credits(batch, config.credit);
    let mut grad = Gradient::default();
    for (s, credit) in batch.iter().zip(&credit) {
        let ids = &s.sample.ids;
        for t in 0..ids.len() {
            let ctx = policy.context(ids, t);
            let p = policy.probs(&ctx);
            let lp = log_prob_grad(&p, ids[t] as usize);
            let c = credit[t] * scale;
            let row = grad
                .policy
                .entry(ctx.clone())
                .or_insert_with(|| vec![0.0; p.len()]);
            for (g, d) in row.iter_mut().zip(&lp) {
                *g += c * d;
            }
            let beta_t = entropy_schedule(config.beta, config.alpha, t + 1) * scale;
            if beta_t > 0.0 {
                let eg = entropy_grad(&p);
                let row = grad.entropy.entry(ctx).or_insert_with(|| vec![0.0; p.len()]);
                for (g, d) in row.iter_mut().zip(&eg) {
                    *g += beta_t * d;
                }
            }
        }
    }
    Ok(grad)
}

/// One gradient-ascent update of the logits.
pub fn reinforce_step(
    policy: &mut TabularPolicy,
    batch: &[ScoredSample],
    config: &TrainConfig,
) -> Result<Gradient> {
    let grad = reinforce_gradient(policy, batch, config)?;
    apply(policy, &grad.policy, config.learning_rate);
    apply(policy, &grad.entropy, config.learning_rate);
    Ok(grad)
}

fn apply(policy: &mut TabularPolicy, term: &HashMap<Context, Vec<f64>>, lr: f64) {
    for (ctx, g) in term {
        let row = policy.logits_mut(ctx);
        for (z, d) in row.iter_mut().zip(g) {
            *z += lr * d;
        }
    }
}

/// Mean per-token log-likelihood of the corpus.
pub fn mean_log_likelihood(policy: &TabularPolicy, corpus: &Corpus) -> f64 {
    let total: f64 = corpus
        .sequences()
        .iter()
        .map(|s| policy.log_likelihood(s.ids()))
        .sum();
    total / corpus.token_count() as f64
}

/// Full-batch maximum-likelihood training.
///
/// Each step moves every observed context's logits by
/// `lr * (empirical next-token distribution - policy distribution)`, the
/// gradient of that context's mean log-likelihood. This is the corpus
/// log-likelihood gradient rescaled per context, so rare contexts learn as
/// fast as frequent ones.
pub fn pretrain_ml(policy: &mut TabularPolicy, corpus: &Corpus, steps: usize, lr: f64) {
    let vocab = policy.vocab();
    let mut counts: HashMap<Context, Vec<f64>> = HashMap::new();
    for s in corpus.sequences() {
        let ids = s.ids();
        for t in 0..ids.len() {
            let row = counts
                .entry(policy.context(ids, t))
                .or_insert_with(|| vec![0.0; vocab]);
            if let Some(c) = row.get_mut(ids[t] as usize) {
                *c += 1.0;
            }
        }
    }
    let mut targets: Vec<(Context, Vec<f64>)> = counts
        .into_iter()
        .map(|(ctx, row)| {
            let n: f64 = row.iter().sum();
            (ctx, row.into_iter().map(|c| c / n).collect())
        })
        .collect();
    targets.sort_by(|a, b| a.0.cmp(&b.0));
    for _ in 0..steps {
        for (ctx, target) in &targets {
            let p = policy.probs(ctx);
            let row = policy.logits_mut(ctx);
            for ((z, q), pi) in row.iter_mut().zip(target).zip(&p) {
                *z += lr * (q - pi);
            }
        }
    }
}

/// Everything needed to score a sampled candidate.
pub struct RewardModel<'a> {
    pub table: &'a MaxCountTable,
    pub bleu: BleuParams,
    pub index: &'a BertGramIndex,
    pub embedder: SyntheticEmbedder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub mixed: Vec<f64>,
    pub bert_total: f64,
    pub bleu: f64,
}

impl RewardModel<'_> {
    pub fn score(&self, ids: &[TokenId], gamma: f64, mix_weight: f64) -> Result<Scored> {
        let emb = self.embedder.embed(0, ids)?;
        let bert = indexed_reward(ids, &emb, self.index, gamma)?;
        let inc = shaped_increments(ids, self.table, &self.bleu)?;
        let bleu = bleu(ids, self.table, &self.bleu)?;
        let mixed = mixed_reward(&bert, &inc, mix_weight)?;
        Ok(Scored {
            mixed: mixed.per_position,
            bert_total: bert.total,
            bleu,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    /// Mean mixed reward total.
    pub reward: f64,
    pub bert_reward: f64,
    /// Mean sequence-level n-gram score.
    pub ngram_reward: f64,
    /// Mean next-token entropy per generated step, in nats.
    pub entropy: f64,
    pub mean_len: f64,
    pub rho: f64,
    pub rho2: f64,
    pub rho4: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\treward\tbert_reward\tngram_reward\tentropy\tmean_len\trho\trho2\trho4\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.step, r.reward, r.bert_reward, r.ngram_reward, r.entropy, r.mean_len, r.rho, r.rho2, r.rho4
            );
        }
        out
    }
}

fn record(step: usize, batch: &[ScoredSample], scores: &[Scored]) -> TraceRecord {
    let n = batch.len() as f64;
    let steps: usize = batch.iter().map(|s| s.sample.entropies.len()).sum();
    let entropy: f64 = batch
        .iter()
        .flat_map(|s| s.sample.entropies.iter())
        .sum::<f64>()
        / steps.max(1) as f64;
    let seqs: Vec<&[TokenId]> = batch.iter().map(|s| s.sample.ids.as_slice()).collect();
    let div = diversity_metrics(&seqs, NgramScope::Batch);
    TraceRecord {
        step,
        reward: batch.iter().map(ScoredSample::total).sum::<f64>() / n,
        bert_reward: scores.iter().map(|s| s.bert_total).sum::<f64>() / n,
        ngram_reward: scores.iter().map(|s| s.bleu).sum::<f64>() / n,
        entropy,
        mean_len: div.mean_length,
        rho: div.rho,
        rho2: div.rho_2,
        rho4: div.rho_4,
    }
}

fn sample_batch(
    policy: &TabularPolicy,
    lengths: &LengthDistribution,
    rng: &mut ChaCha8Rng,
    model: &RewardModel<'_>,
    config: &TrainConfig,
    count: usize,
) -> Result<(Vec<ScoredSample>, Vec<Scored>)> {
    let samples: Vec<Sampled> = (0..count)
        .map(|_| policy.sample(lengths, rng))
        .collect();
    let scores = samples
        .par_iter()
        .map(|s| model.score(&s.ids, config.gamma, config.mix_weight))
        .collect::<Result<Vec<_>>>()?;
    let batch = samples
        .into_iter()
        .zip(&scores)
        .map(|(sample, sc)| ScoredSample {
            sample,
            rewards: sc.mixed.clone(),
        })
        .collect();
    Ok((batch, scores))
}

/// Statistics of `count` fresh samples from `policy`, scored with the
/// reward settings of `config`.
pub fn evaluate(
    policy: &TabularPolicy,
    lengths: &LengthDistribution,
    model: &RewardModel<'_>,
    config: &TrainConfig,
    count: usize,
    seed: u64,
) -> Result<TraceRecord> {
    if count == 0 {
        return Err(Error::InvalidParameter("evaluation needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, scores) = sample_batch(policy, lengths, &mut rng, model, config, count)?;
    Ok(record(0, &batch, &scores))
}

/// Maximum-likelihood pretraining followed by REINFORCE. Records the batch
/// drawn at step 0 (right after pretraining), every `log_every` steps, and
/// after the last update.
pub fn train(
    config: &TrainConfig,
    corpus: &Corpus,
    model: &RewardModel<'_>,
) -> Result<(TabularPolicy, TrainTrace)> {
    config.validate()?;
    let mut policy = TabularPolicy::new(corpus.vocabulary().len(), config.context_order);
    pretrain_ml(
        &mut policy,
        corpus,
        config.pretrain_steps,
        config.pretrain_learning_rate,
    );
    let lengths = length_distribution(corpus);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = TrainTrace::default();
    for step in 0..config.steps {
        let (batch, scores) = sample_batch(&policy, &lengths, &mut rng, model, config, config.batch_size)?;
        if step % config.log_every == 0 {
            trace.records.push(record(step, &batch, &scores));
        }
        reinforce_step(&mut policy, &batch, config)?;
    }
    let (batch, scores) = sample_batch(&policy, &lengths, &mut rng, model, config, config.batch_size)?;
    trace.records.push(record(config.steps, &batch, &scores));
    Ok((policy, trace))
}
