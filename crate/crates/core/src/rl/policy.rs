//! Autoregressive softmax policy over a bounded token history, with
//! closed-form gradients of log-probabilities and entropies.

use std::collections::HashMap;

use rand::Rng;

use crate::corpus::{LengthDistribution, TokenId};

pub type Context = Vec<TokenId>;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    vocab: usize,
    order: usize,
    default_row: Vec<f64>,
    rows: HashMap<Context, Vec<f64>>,
}

/// One generated sequence with the per-step quantities REINFORCE needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub ids: Vec<TokenId>,
    pub log_probs: Vec<f64>,
    /// Entropy of the full next-token distribution at each step, in nats.
    pub entropies: Vec<f64>,
}

impl TabularPolicy {
    /// Uniform policy over `vocab` tokens conditioned on the last `order`
    /// tokens.
    pub fn new(vocab: usize, order: usize) -> Self {
        assert!(vocab >= 1, "vocabulary must not be empty");
        Self {
            vocab,
            order,
            default_row: vec![0.0; vocab],
            rows: HashMap::new(),
        }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Marker used for history slots before the first token.
    pub fn bos(&self) -> TokenId {
        self.vocab as TokenId
    }

    /// History preceding position `t` of `ids`, left-filled with BOS.
    pub fn context(&self, ids: &[TokenId], t: usize) -> Context {
        (0..self.order)
            .map(|k| {
                let back = self.order - k;
                if t >= back {
                    ids[t - back]
                } else {
                    self.bos()
                }
            })
            .collect()
    }

    pub fn logits(&self, ctx: &[TokenId]) -> &[f64] {
        self.rows.get(ctx).unwrap_or(&self.default_row)
    }

    pub fn logits_mut(&mut self, ctx: &[TokenId]) -> &mut Vec<f64> {
        if !self.rows.contains_key(ctx) {
            self.rows.insert(ctx.to_vec(), self.default_row.clone());
        }
        self.rows.get_mut(ctx).expect("inserted above")
    }

    pub fn set_logits(&mut self, ctx: &[TokenId], logits: Vec<f64>) {
        assert_eq!(logits.len(), self.vocab);
        self.rows.insert(ctx.to_vec(), logits);
    }

    pub fn probs(&self, ctx: &[TokenId]) -> Vec<f64> {
        softmax(self.logits(ctx))
    }

    /// Contexts with their own logit row.
    pub fn contexts(&self) -> impl Iterator<Item = &Context> {
        self.rows.keys()
    }

    /// `log p(ids)` under the policy (length given).
    pub fn log_likelihood(&self, ids: &[TokenId]) -> f64 {
        (0..ids.len())
            .map(|t| log_softmax_at(self.logits(&self.context(ids, t)), ids[t] as usize))
            .sum()
    }

    /// Draws a length from `lengths`, then exactly that many tokens.
    pub fn sample<R: Rng + ?Sized>(&self, lengths: &LengthDistribution, rng: &mut R) -> Sampled {
        let len = sample_length(lengths, rng);
        let mut ids = Vec::with_capacity(len);
        let mut log_probs = Vec::with_capacity(len);
        let mut entropies = Vec::with_capacity(len);
        for t in 0..len {
            let p = self.probs(&self.context(&ids, t));
            let w = sample_categorical(&p, rng);
            log_probs.push(p[w].ln());
            entropies.push(entropy(&p));
            ids.push(w as TokenId);
        }
        Sampled {
            ids,
            log_probs,
            entropies,
        }
    }
}

pub fn sample_length<R: Rng + ?Sized>(lengths: &LengthDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&l, &p) in lengths.probs() {
        acc += p;
        if u < acc {
            return l;
        }
    }
    lengths.max_length()
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative total
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits[i] - lse
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&pi| pi > 0.0)
        .map(|&pi| pi * pi.ln())
        .sum::<f64>()
}

/// d/dz log softmax(z)[token] = onehot(token) - p.
pub fn log_prob_grad(p: &[f64], token: usize) -> Vec<f64> {
    let mut g: Vec<f64> = p.iter().map(|&pi| -pi).collect();
    g[token] += 1.0;
    g
}

/// d/dz H(softmax(z)) = -p * (log p + H).
pub fn entropy_grad(p: &[f64]) -> Vec<f64> {
    let h = entropy(p);
    p.iter()
        .map(|&pi| if pi > 0.0 { -pi * (pi.ln() + h) } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn context_is_left_filled() {
        let p = TabularPolicy::new(5, 2);
        assert_eq!(p.context(&[1, 2, 3], 0), vec![5, 5]);
        assert_eq!(p.context(&[1, 2, 3], 1), vec![5, 1]);
        assert_eq!(p.context(&[1, 2, 3], 3), vec![2, 3]);
        let unigram = TabularPolicy::new(5, 0);
        assert!(unigram.context(&[1, 2], 2).is_empty());
    }

    #[test]
    fn uniform_entropy_is_log_v() {
        let p = TabularPolicy::new(7, 2);
        let lengths = LengthDistribution::from_lengths([4]).unwrap();
        let s = p.sample(&lengths, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(s.ids.len(), 4);
        for h in s.entropies {
            assert!((h - 7f64.ln()).abs() < 1e-6);
        }
        for lp in s.log_probs {
            assert!((lp + 7f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn peaked_policy_is_deterministic() {
        let mut p = TabularPolicy::new(3, 1);
        p.default_row = vec![-50.0, 50.0, -50.0];
        p.set_logits(&[1], vec![-50.0, -50.0, 50.0]);
        p.set_logits(&[2], vec![50.0, -50.0, -50.0]);
        let lengths = LengthDistribution::from_lengths([5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = p.sample(&lengths, &mut rng);
            assert_eq!(s.ids, vec![1, 2, 0, 1, 2]);
            assert!(s.entropies.iter().all(|&h| h < 1e-9));
        }
    }

    #[test]
    fn sampled_lengths_follow_distribution() {
        let lens: Vec<usize> = [5, 5, 6, 7, 7, 7, 8, 9, 10, 10].to_vec();
        let dist = LengthDistribution::from_lengths(lens).unwrap();
        let p = TabularPolicy::new(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 10_000;
        let mut hist: HashMap<usize, f64> = HashMap::new();
        for _ in 0..n {
            *hist.entry(p.sample(&dist, &mut rng).ids.len()).or_default() += 1.0;
        }
        for (&l, &q) in dist.probs() {
            let expect = n as f64 * q;
            let sigma = (n as f64 * q * (1.0 - q)).sqrt();
            let got = hist.get(&l).copied().unwrap_or(0.0);
            assert!((got - expect).abs() < 3.0 * sigma, "length {l}: {got} vs {expect}");
        }
        assert!(hist.keys().all(|l| dist.prob(*l) > 0.0));
    }

    #[test]
    fn log_likelihood_matches_sampled_log_probs() {
        let mut p = TabularPolicy::new(4, 2);
        p.set_logits(&[4, 4], vec![0.3, -1.0, 2.0, 0.1]);
        let dist = LengthDistribution::from_lengths([6]).unwrap();
        let s = p.sample(&dist, &mut ChaCha8Rng::seed_from_u64(5));
        let total: f64 = s.log_probs.iter().sum();
        assert!((p.log_likelihood(&s.ids) - total).abs() < 1e-12);
    }

    fn fd(f: impl Fn(&[f64]) -> f64, z: &[f64], h: f64) -> Vec<f64> {
        (0..z.len())
            .map(|i| {
                let mut up = z.to_vec();
                let mut dn = z.to_vec();
                up[i] += h;
                dn[i] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn row_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let v = rng.random_range(2..12);
            let z: Vec<f64> = (0..v).map(|_| rng.random_range(-3.0..3.0)).collect();
            let token = rng.random_range(0..v);
            let p = softmax(&z);
            let lp = fd(|z| log_softmax_at(z, token), &z, 1e-5);
            let ent = fd(|z| entropy(&softmax(z)), &z, 1e-5);
            for (a, b) in log_prob_grad(&p, token).iter().zip(&lp) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{a} vs {b}");
            }
            for (a, b) in entropy_grad(&p).iter().zip(&ent) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{a} vs {b}");
            }
        }
    }
}
