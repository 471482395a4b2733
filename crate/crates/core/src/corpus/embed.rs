//! Skip-gram with negative sampling, used to pretrain the discriminators'
//! frozen word embeddings.

use super::vocab::{BOS, PAD};
use super::LabeledSequence;
use crate::numerics::{dot, sigmoid, RngStream, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub epochs: usize,
    pub window: usize,
    pub negatives: usize,
    /// Initial learning rate, decayed linearly to `lr * 1e-4`.
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 32,
            epochs: 5,
            window: 2,
            negatives: 5,
            lr: 0.025,
        }
    }
}

const NEG_TABLE_SIZE: usize = 100_000;

/// Trains `vocab_size × dim` input embeddings on the token streams of
/// `corpus`. Reserved tokens are skipped as centers and contexts.
pub fn pretrain_embeddings(
    corpus: &[LabeledSequence],
    vocab_size: usize,
    config: SkipGramConfig,
    rng: &RngStream,
) -> Result<Tensor> {
    if config.dim < 2 {
        return Err(Error::InvalidArgument("embedding dim must be >= 2".into()));
    }
    let mut counts = vec![0usize; vocab_size];
    for s in corpus {
        for &t in &s.tokens {
            if t >= vocab_size {
                return Err(Error::TokenOutOfRange { id: t, vocab: vocab_size });
            }
            counts[t] += 1;
        }
    }
    counts[BOS] = 0;
    counts[PAD] = 0;

    let mut init = rng.derive("sgns-init", 0);
    let scale = 0.5 / config.dim as f64;
    let mut input = Tensor::zeros(vocab_size, config.dim);
    input
        .as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = (2.0 * init.uniform() - 1.0) * scale);
    let mut output = Tensor::zeros(vocab_size, config.dim);

    // Unigram^0.75 table for negatives.
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Ok(input);
    }
    let mut table = Vec::with_capacity(NEG_TABLE_SIZE);
    let mut acc = 0.0;
    let mut tok = 0;
    for i in 0..NEG_TABLE_SIZE {
        let target = (i as f64 + 0.5) / NEG_TABLE_SIZE as f64 * total;
        while acc + weights[tok] < target && tok + 1 < vocab_size {
            acc += weights[tok];
            tok += 1;
        }
        table.push(tok);
    }

    let usable = |t: usize| t != BOS && t != PAD;
    let total_words: usize = corpus.iter().map(|s| s.tokens.iter().filter(|&&t| usable(t)).count()).sum();
    let total_steps = (total_words * config.epochs).max(1) as f64;
    let mut processed = 0usize;
    let mut grad_center = vec![0.0; config.dim];
    for epoch in 0..config.epochs {
        let mut r = rng.derive("sgns-epoch", epoch as u64);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        r.shuffle(&mut order);
        for &si in &order {
            let tokens: Vec<usize> = corpus[si].tokens.iter().copied().filter(|&t| usable(t)).collect();
            for (i, &center) in tokens.iter().enumerate() {
                let lr = (config.lr * (1.0 - processed as f64 / total_steps)).max(config.lr * 1e-4);
                processed += 1;
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window + 1).min(tokens.len());
                for j in lo..hi {
                    if j == i {
                        continue;
                    }
                    grad_center.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=config.negatives {
                        let (target, label) = if k == 0 {
                            (tokens[j], 1.0)
                        } else {
                            let neg = table[r.below(NEG_TABLE_SIZE)];
                            if neg == tokens[j] {
                                continue;
                            }
                            (neg, 0.0)
                        };
                        let score = sigmoid(dot(input.row(center), output.row(target)));
                        let g = lr * (label - score);
                        for d in 0..config.dim {
                            grad_center[d] += g * output.row(target)[d];
                        }
                        let c_row = input.row(center).to_vec();
                        let o_row = output.row_mut(target);
                        for d in 0..config.dim {
                            o_row[d] += g * c_row[d];
                        }
                    }
                    let c_row = input.row_mut(center);
                    for d in 0..config.dim {
                        c_row[d] += grad_center[d];
                    }
                }
            }
        }
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("skip-gram embeddings".into()));
    }
    Ok(input)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    /// Tokens 2,3 only ever appear together, as do 4,5.
    fn paired_corpus() -> Vec<LabeledSequence> {
        let mut out = Vec::new();
        for i in 0..200 {
            let (a, b) = if i % 2 == 0 { (2, 3) } else { (4, 5) };
            let tokens = (0..8).map(|k| if (k + i) % 2 == 0 { a } else { b }).collect();
            out.push(LabeledSequence { label: 0, tokens });
        }
        out
    }

    #[test]
    fn co_occurring_tokens_end_up_similar() {
        let cfg = SkipGramConfig { dim: 8, epochs: 5, ..Default::default() };
        let e = pretrain_embeddings(&paired_corpus(), 6, cfg, &RngStream::new(1, 0)).unwrap();
        let sim = cosine(e.row(2), e.row(3));
        assert!(sim > 0.5, "cos(2,3) = {sim}");
        assert!(cosine(e.row(4), e.row(5)) > 0.5);
        assert!(cosine(e.row(2), e.row(4)) < sim);
    }

    #[test]
    fn rows_are_finite_and_nonzero() {
        let e = pretrain_embeddings(&paired_corpus(), 6, SkipGramConfig::default(), &RngStream::new(2, 0)).unwrap();
        assert!(e.is_finite());
        for t in 2..6 {
            assert!(e.row(t).iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let c = paired_corpus();
        let cfg = SkipGramConfig { epochs: 2, ..Default::default() };
        let a = pretrain_embeddings(&c, 6, cfg, &RngStream::new(3, 0)).unwrap();
        let b = pretrain_embeddings(&c, 6, cfg, &RngStream::new(3, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_tiny_dim() {
        let cfg = SkipGramConfig { dim: 1, ..Default::default() };
        assert!(pretrain_embeddings(&paired_corpus(), 6, cfg, &RngStream::new(0, 0)).is_err());
    }
}
