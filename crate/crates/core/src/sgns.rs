//! Skip-gram embeddings trained with negative sampling.
//!
//! Each `(center, context)` pair inside the window pushes the input vector
//! of the center token towards the output vector of the context token and
//! away from `negatives` tokens drawn from the unigram distribution raised
//! to the 3/4 power. The final embedding of a token is its input row.
//! A full-softmax objective is kept for tiny vocabularies.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::embedding::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::math::{dot, rng_for, sigmoid, softplus, SharedTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    #[default]
    NegativeSampling,
    FullSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_count: usize,
    /// Frequent-token subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    pub seed: u64,
    pub objective: Objective,
    /// Worker threads. Only a single worker is bit-reproducible.
    pub workers: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 0,
            subsample: 0.0,
            seed: 42,
            objective: Objective::NegativeSampling,
            workers: 1,
        }
    }
}

impl SgnsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.subsample.is_nan() || self.subsample < 0.0 {
            return Err(Error::Config("subsample threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Loss of one positive pair plus its negatives, with gradients of that
/// loss with respect to every vector involved.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// `-ln σ(v·u) - Σ ln σ(-v·n)`
pub fn negative_sampling_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    softplus(-dot(center, context)) + negatives.iter().map(|n| softplus(dot(center, n))).sum::<f64>()
}

pub fn negative_sampling_gradient(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> PairGradient {
    let pos = dot(center, context);
    let g_pos = sigmoid(pos) - 1.0;
    let mut loss = softplus(-pos);
    let mut grad_center: Vec<f64> = context.iter().map(|u| g_pos * u).collect();
    let grad_context = center.iter().map(|v| g_pos * v).collect();
    let mut grad_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = dot(center, n);
        loss += softplus(s);
        let g = sigmoid(s);
        for (gc, x) in grad_center.iter_mut().zip(n.iter()) {
            *gc += g * x;
        }
        grad_negs.push(center.iter().map(|v| g * v).collect());
    }
    PairGradient {
        loss,
        center: grad_center,
        context: grad_context,
        negatives: grad_negs,
    }
}

/// `-ln softmax(V_c · U)[target]` over all output rows.
pub fn softmax_loss(center: &[f64], outputs: &[&[f64]], target: usize) -> f64 {
    let scores: Vec<f64> = outputs.iter().map(|u| dot(center, u)).collect();
    log_sum_exp(&scores) - scores[target]
}

/// Gradient of [`softmax_loss`]; `negatives` holds the gradient of every
/// output row in order (including the target).
pub fn softmax_gradient(center: &[f64], outputs: &[&[f64]], target: usize) -> PairGradient {
    let scores: Vec<f64> = outputs.iter().map(|u| dot(center, u)).collect();
    let lse = log_sum_exp(&scores);
    let probs: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
    let mut grad_center = vec![0.0; center.len()];
    let mut grad_outputs: Vec<Vec<f64>> = Vec::with_capacity(outputs.len());
    for (j, (u, p)) in outputs.iter().zip(&probs).enumerate() {
        let coef = p - if j == target { 1.0 } else { 0.0 };
        for (g, x) in grad_center.iter_mut().zip(u.iter()) {
            *g += coef * x;
        }
        grad_outputs.push(center.iter().map(|v| coef * v).collect());
    }
    PairGradient {
        loss: lse - scores[target],
        center: grad_center,
        context: grad_outputs[target].clone(),
        negatives: grad_outputs,
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Unigram^0.75 sampler over a set of rows.
pub(crate) struct NoiseTable {
    rows: Vec<usize>,
    dist: Option<WeightedIndex<f64>>,
}

impl NoiseTable {
    pub(crate) fn new(rows: Vec<usize>, counts: &[u64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        NoiseTable {
            rows,
            dist: WeightedIndex::new(weights).ok(),
        }
    }

    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> Option<usize> {
        self.dist.as_ref().map(|d| self.rows[d.sample(rng)])
    }
}

/// V rows uniform in `[-0.5/dim, 0.5/dim]`.
pub(crate) fn init_input_rows(rows: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = rng_for(seed, u64::MAX);
    let half = 0.5 / dim as f64;
    (0..rows * dim).map(|_| rng.random_range(-half..half) as f32).collect()
}

/// Per-token keep probability for frequent-token subsampling.
pub(crate) fn keep_probabilities(counts: &[u64], threshold: f64) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .map(|&c| {
            if threshold <= 0.0 || c == 0 {
                return 1.0;
            }
            let f = c as f64 / total as f64;
            (((f / threshold).sqrt() + 1.0) * threshold / f).min(1.0)
        })
        .collect()
}

/// Applies one SGD step for `(center, context)` with the given negatives
/// and returns the pair loss. Rows are copied out, the gradient is computed
/// in `f64`, and the update is written back.
pub(crate) fn sgd_pair(
    input: &SharedTable,
    output: &SharedTable,
    dim: usize,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
) -> f64 {
    let mut v = vec![0.0; dim];
    let mut u = vec![0.0; dim];
    input.read_row(center, &mut v);
    output.read_row(context, &mut u);
    let negs: Vec<Vec<f64>> = negatives
        .iter()
        .map(|&n| {
            let mut row = vec![0.0; dim];
            output.read_row(n, &mut row);
            row
        })
        .collect();
    let neg_refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
    let g = negative_sampling_gradient(&v, &u, &neg_refs);
    input.add_row(center, &g.center, -lr);
    output.add_row(context, &g.context, -lr);
    for (&n, gn) in negatives.iter().zip(&g.negatives) {
        output.add_row(n, gn, -lr);
    }
    g.loss
}

fn sgd_softmax(
    input: &SharedTable,
    output: &SharedTable,
    dim: usize,
    vocab: usize,
    center: usize,
    context: usize,
    lr: f64,
) -> f64 {
    let mut v = vec![0.0; dim];
    input.read_row(center, &mut v);
    let outs: Vec<Vec<f64>> = (0..vocab)
        .map(|r| {
            let mut row = vec![0.0; dim];
            output.read_row(r, &mut row);
            row
        })
        .collect();
    let refs: Vec<&[f64]> = outs.iter().map(Vec::as_slice).collect();
    let g = softmax_gradient(&v, &refs, context);
    input.add_row(center, &g.center, -lr);
    for (r, gr) in g.negatives.iter().enumerate() {
        output.add_row(r, gr, -lr);
    }
    g.loss
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
    pub pairs: u64,
}

/// Incremental trainer; [`train_skipgram`] runs it to completion.
pub struct SkipGramTrainer {
    cfg: SgnsConfig,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    sentences: Vec<Vec<u32>>,
    keep: Vec<f64>,
    input: SharedTable,
    output: SharedTable,
    noise: NoiseTable,
    epoch: usize,
    processed: AtomicU64,
    total_tokens: u64,
    losses: Vec<EpochLoss>,
}

impl SkipGramTrainer {
    pub fn new<S: AsRef<str>>(sentences: &[Vec<S>], cfg: &SgnsConfig) -> Result<Self> {
        cfg.validate()?;
        let mut raw_counts: Vec<(String, u64)> = Vec::new();
        let mut raw_index: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                let t = t.as_ref();
                let i = *raw_index.entry(t).or_insert_with(|| {
                    raw_counts.push((t.to_owned(), 0));
                    raw_counts.len() - 1
                });
                raw_counts[i].1 += 1;
            }
        }
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        let mut index = HashMap::new();
        for (t, c) in raw_counts {
            if c as usize >= cfg.min_count {
                index.insert(t.clone(), tokens.len());
                tokens.push(t);
                counts.push(c);
            }
        }
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary {
                min_count: cfg.min_count,
            });
        }
        let encoded: Vec<Vec<u32>> = sentences
            .iter()
            .map(|s| {
                s.iter()
                    .filter_map(|t| index.get(t.as_ref()).map(|&i| i as u32))
                    .collect::<Vec<_>>()
            })
            .filter(|s| !s.is_empty())
            .collect();
        let total_tokens = encoded.iter().map(|s| s.len() as u64).sum();
        let keep = keep_probabilities(&counts, cfg.subsample);
        let noise = NoiseTable::new((0..tokens.len()).collect(), &counts);
        let input = SharedTable::from_vec(cfg.dim, init_input_rows(tokens.len(), cfg.dim, cfg.seed));
        let output = SharedTable::zeros(tokens.len(), cfg.dim);
        Ok(SkipGramTrainer {
            cfg: cfg.clone(),
            tokens,
            index,
            counts,
            sentences: encoded,
            keep,
            input,
            output,
            noise,
            epoch: 0,
            processed: AtomicU64::new(0),
            total_tokens,
            losses: Vec::new(),
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Dot product of the input vector of `a` with the output vector of `b`.
    pub fn score(&self, a: &str, b: &str) -> Option<f64> {
        let (ia, ib) = (*self.index.get(a)?, *self.index.get(b)?);
        let mut v = vec![0.0; self.cfg.dim];
        let mut u = vec![0.0; self.cfg.dim];
        self.input.read_row(ia, &mut v);
        self.output.read_row(ib, &mut u);
        Some(dot(&v, &u))
    }

    fn learning_rate(&self) -> f64 {
        let total = (self.cfg.epochs as u64 * self.total_tokens).max(1) as f64;
        let done = self.processed.load(Ordering::Relaxed) as f64;
        self.cfg.learning_rate * (1.0 - done / total).max(1e-4)
    }

    fn train_sentences(&self, sentences: &[Vec<u32>], stream: u64) -> (f64, u64) {
        let mut rng = rng_for(self.cfg.seed, stream);
        let dim = self.cfg.dim;
        let window = self.cfg.window;
        let mut loss = 0.0;
        let mut pairs = 0u64;
        let mut negs = Vec::with_capacity(self.cfg.negatives);
        let mut kept = Vec::new();
        for sentence in sentences {
            kept.clear();
            for &t in sentence {
                let p = self.keep[t as usize];
                if p >= 1.0 || rng.random::<f64>() < p {
                    kept.push(t as usize);
                }
            }
            let lr = self.learning_rate();
            for (pos, &center) in kept.iter().enumerate() {
                let lo = pos.saturating_sub(window);
                let hi = (pos + window + 1).min(kept.len());
                for (cpos, &context) in kept.iter().enumerate().take(hi).skip(lo) {
                    if cpos == pos {
                        continue;
                    }
                    loss += match self.cfg.objective {
                        Objective::NegativeSampling => {
                            negs.clear();
                            for _ in 0..self.cfg.negatives {
                                match self.noise.sample(&mut rng) {
                                    Some(n) if n != context => negs.push(n),
                                    _ => {}
                                }
                            }
                            sgd_pair(&self.input, &self.output, dim, center, context, &negs, lr)
                        }
                        Objective::FullSoftmax => {
                            sgd_softmax(&self.input, &self.output, dim, self.tokens.len(), center, context, lr)
                        }
                    };
                    pairs += 1;
                }
            }
            self.processed.fetch_add(sentence.len() as u64, Ordering::Relaxed);
        }
        (loss, pairs)
    }

    /// Runs one pass over the corpus and returns its mean pair loss.
    pub fn run_epoch(&mut self) -> EpochLoss {
        let epoch = self.epoch;
        let workers = self.cfg.workers.max(1);
        let (loss, pairs) = if workers == 1 {
            self.train_sentences(&self.sentences, (epoch as u64) << 16)
        } else {
            let chunk = self.sentences.len().div_ceil(workers).max(1);
            let this = &*self;
            std::thread::scope(|scope| {
                let handles: Vec<_> = this
                    .sentences
                    .chunks(chunk)
                    .enumerate()
                    .map(|(w, part)| scope.spawn(move || this.train_sentences(part, ((epoch as u64) << 16) | w as u64)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .fold((0.0, 0), |acc, x| (acc.0 + x.0, acc.1 + x.1))
            })
        };
        self.epoch += 1;
        let report = EpochLoss {
            epoch: self.epoch,
            mean_loss: if pairs == 0 { 0.0 } else { loss / pairs as f64 },
            pairs,
        };
        log::info!(
            "skip-gram epoch {}: mean loss {:.6} over {} pairs",
            report.epoch,
            report.mean_loss,
            report.pairs
        );
        self.losses.push(report);
        report
    }

    pub fn finish(self) -> SkipGramModel {
        let space = EmbeddingSpace::new(self.cfg.dim, self.tokens.clone(), self.input.to_vec())
            .expect("trainer keeps rows consistent with its vocabulary");
        SkipGramModel {
            space,
            output: self.output.to_vec(),
            counts: self.counts,
            losses: self.losses,
        }
    }
}

/// Trained skip-gram parameters.
#[derive(Debug, Clone)]
pub struct SkipGramModel {
    /// Final embeddings (input rows).
    pub space: EmbeddingSpace,
    /// Output rows, row-major in the same token order.
    pub output: Vec<f32>,
    pub counts: Vec<u64>,
    pub losses: Vec<EpochLoss>,
}

pub fn train_skipgram<S: AsRef<str>>(sentences: &[Vec<S>], cfg: &SgnsConfig) -> Result<SkipGramModel> {
    let mut trainer = SkipGramTrainer::new(sentences, cfg)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch();
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn negative_sampling_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dim = 6;
        let h = 1e-6;
        for _ in 0..20 {
            let v = random_vec(&mut rng, dim);
            let u = random_vec(&mut rng, dim);
            let negs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, dim)).collect();
            let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
            let g = negative_sampling_gradient(&v, &u, &refs);
            assert!(rel_err(g.loss, negative_sampling_loss(&v, &u, &refs)) < 1e-12);
            for i in 0..dim {
                let (mut vp, mut vm) = (v.clone(), v.clone());
                vp[i] += h;
                vm[i] -= h;
                let fd = (negative_sampling_loss(&vp, &u, &refs) - negative_sampling_loss(&vm, &u, &refs)) / (2.0 * h);
                assert!(rel_err(fd, g.center[i]) < 1e-4 || (fd - g.center[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 4;
        let v = random_vec(&mut rng, dim);
        let outs: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, dim)).collect();
        let refs: Vec<&[f64]> = outs.iter().map(Vec::as_slice).collect();
        let g = softmax_gradient(&v, &refs, 2);
        let h = 1e-6;
        for i in 0..dim {
            let (mut vp, mut vm) = (v.clone(), v.clone());
            vp[i] += h;
            vm[i] -= h;
            let fd = (softmax_loss(&vp, &refs, 2) - softmax_loss(&vm, &refs, 2)) / (2.0 * h);
            assert!((fd - g.center[i]).abs() < 1e-7);
        }
        for j in 0..5 {
            for i in 0..dim {
                let mut op = outs.clone();
                let mut om = outs.clone();
                op[j][i] += h;
                om[j][i] -= h;
                let rp: Vec<&[f64]> = op.iter().map(Vec::as_slice).collect();
                let rm: Vec<&[f64]> = om.iter().map(Vec::as_slice).collect();
                let fd = (softmax_loss(&v, &rp, 2) - softmax_loss(&v, &rm, 2)) / (2.0 * h);
                assert!((fd - g.negatives[j][i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn lone_positive_pair_aligns_every_epoch() {
        let corpus = vec![vec!["x", "y"]];
        let cfg = SgnsConfig {
            dim: 8,
            negatives: 0,
            epochs: 10,
            ..Default::default()
        };
        let mut t = SkipGramTrainer::new(&corpus, &cfg).unwrap();
        let mut prev = t.score("x", "y").unwrap();
        for _ in 0..10 {
            t.run_epoch();
            let now = t.score("x", "y").unwrap();
            assert!(now > prev, "{now} <= {prev}");
            prev = now;
        }
    }

    #[test]
    fn min_count_filters_vocabulary() {
        let corpus = vec![vec!["a", "b", "a", "q"], vec!["b", "a"]];
        let cfg = SgnsConfig {
            dim: 4,
            min_count: 2,
            epochs: 1,
            ..Default::default()
        };
        let model = train_skipgram(&corpus, &cfg).unwrap();
        let tokens: Vec<&str> = model.space.tokens().collect();
        assert_eq!(tokens, vec!["a", "b"]);

        let cfg = SgnsConfig { min_count: 10, ..cfg };
        assert!(matches!(
            train_skipgram(&corpus, &cfg),
            Err(Error::EmptyVocabulary { min_count: 10 })
        ));
    }

    #[test]
    fn single_worker_is_deterministic() {
        let corpus: Vec<Vec<String>> = (0..30)
            .map(|i| (0..8).map(|j| format!("t{}", (i * 3 + j) % 11)).collect())
            .collect();
        let cfg = SgnsConfig {
            dim: 8,
            epochs: 2,
            subsample: 0.05,
            ..Default::default()
        };
        let a = train_skipgram(&corpus, &cfg).unwrap();
        let b = train_skipgram(&corpus, &cfg).unwrap();
        assert_eq!(a.space, b.space);
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn multi_worker_trains() {
        let corpus: Vec<Vec<String>> = (0..40)
            .map(|i| (0..6).map(|j| format!("t{}", (i + j) % 9)).collect())
            .collect();
        let cfg = SgnsConfig {
            dim: 8,
            epochs: 3,
            workers: 4,
            ..Default::default()
        };
        let m = train_skipgram(&corpus, &cfg).unwrap();
        assert_eq!(m.space.len(), 9);
        assert!(m.losses.iter().all(|l| l.mean_loss.is_finite()));
    }

    #[test]
    fn full_softmax_loss_decreases() {
        let corpus: Vec<Vec<&str>> = vec![vec!["a", "b", "c", "a", "b", "c"]; 5];
        let cfg = SgnsConfig {
            dim: 4,
            window: 1,
            epochs: 20,
            learning_rate: 0.1,
            objective: Objective::FullSoftmax,
            ..Default::default()
        };
        let m = train_skipgram(&corpus, &cfg).unwrap();
        assert!(m.losses.last().unwrap().mean_loss < m.losses[0].mean_loss);
    }

    #[test]
    fn keep_probability_bounds() {
        let keep = keep_probabilities(&[1000, 10, 1], 1e-3);
        assert!(keep[0] < keep[1]);
        assert!(keep.iter().all(|&p| p > 0.0 && p <= 1.0));
        assert_eq!(keep_probabilities(&[5, 5], 0.0), vec![1.0, 1.0]);
    }

    #[test]
    fn invalid_config() {
        let corpus = vec![vec!["a"]];
        for cfg in [
            SgnsConfig {
                dim: 0,
                ..Default::default()
            },
            SgnsConfig {
                window: 0,
                ..Default::default()
            },
            SgnsConfig {
                learning_rate: -1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(train_skipgram(&corpus, &cfg), Err(Error::Config(_))));
        }
    }
}
