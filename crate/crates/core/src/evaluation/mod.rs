//! Micro (NLL-test, BLEU, self-BLEU), macro (adversarial success and
//! evaluator reliability) and application (downstream classification)
//! metrics.

mod evaluator;
mod report;

pub use evaluator::{
    adversarial_eval, downstream_classification, ere_suite, random_token_sequences, ClassificationScores, EreScores,
    EvaluatorConfig,
};
pub use report::{MacroMetrics, MetricsReport, MicroMetrics, Suite, SuiteResult};

use std::collections::HashMap;

use crate::corpus::{LabeledSequence, PAD};
use crate::generator::Generator;
use crate::numerics::par_chunk_map;
use crate::{Error, Result};

/// Precision assigned to an n-gram order with no matches.
pub const BLEU_EPSILON: f64 = 1e-9;
pub const BLEU_MAX_N: usize = 4;

/// Mean per-sequence negative log-likelihood of `test` under `generator`.
pub fn nll_test(generator: &Generator, test: &[LabeledSequence]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InsufficientData("NLL-test needs a nonempty test set".into()));
    }
    generator.mean_nll(test)
}

fn strip_pad(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().copied().filter(|&t| t != PAD).collect()
}

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Reference length closest to `c`; ties go to the shorter one.
fn closest_length(c: usize, lengths: impl Iterator<Item = usize>) -> usize {
    lengths.min_by_key(|&r| (r.abs_diff(c), r)).unwrap_or(c)
}

/// Geometric mean of the modified precisions times the brevity penalty.
/// `clip(g)` is the largest count of n-gram `g` in any reference. Orders
/// longer than the candidate are left out of the mean.
fn bleu_core(cand: &[usize], max_n: usize, ref_len: usize, clip: impl Fn(&[usize]) -> usize) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=max_n.min(cand.len()) {
        let matched: usize = ngram_counts(cand, n).into_iter().map(|(g, c)| c.min(clip(g))).sum();
        let total = cand.len() + 1 - n;
        let p = if matched == 0 { BLEU_EPSILON } else { matched as f64 / total as f64 };
        log_sum += p.ln();
        orders += 1;
    }
    let c = cand.len() as f64;
    let bp = if cand.len() > ref_len { 1.0 } else { (1.0 - ref_len as f64 / c).exp() };
    bp * (log_sum / orders as f64).exp()
}

/// Sentence BLEU of `candidate` against `references`, PAD removed from
/// both. An empty candidate scores 0.
pub fn bleu(candidate: &[usize], references: &[&[usize]], max_n: usize) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("BLEU needs at least one reference".into()));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("BLEU order must be >= 1".into()));
    }
    let cand = strip_pad(candidate);
    let refs: Vec<Vec<usize>> = references.iter().map(|r| strip_pad(r)).collect();
    let ref_counts: Vec<Vec<HashMap<&[usize], usize>>> =
        refs.iter().map(|r| (1..=max_n).map(|n| ngram_counts(r, n)).collect()).collect();
    let ref_len = closest_length(cand.len(), refs.iter().map(Vec::len));
    Ok(bleu_core(&cand, max_n, ref_len, |g| {
        ref_counts.iter().map(|rc| rc[g.len() - 1].get(g).copied().unwrap_or(0)).max().unwrap_or(0)
    }))
}

/// Best and second-best count of an n-gram across samples, with the owner
/// of the best, so the maximum over "all samples but i" is O(1).
#[derive(Clone, Copy, Default)]
struct TopTwo {
    best: usize,
    owner: usize,
    second: usize,
}

impl TopTwo {
    fn push(&mut self, count: usize, owner: usize) {
        if count > self.best {
            self.second = self.best;
            self.best = count;
            self.owner = owner;
        } else if count > self.second {
            self.second = count;
        }
    }

    fn excluding(&self, i: usize) -> usize {
        if self.owner == i {
            self.second
        } else {
            self.best
        }
    }
}

/// Mean BLEU of each sample against all the others.
pub fn self_bleu(samples: &[Vec<usize>], max_n: usize) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!("self-BLEU needs at least 2 samples, got {}", samples.len())));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("BLEU order must be >= 1".into()));
    }
    let stripped: Vec<Vec<usize>> = samples.iter().map(|s| strip_pad(s)).collect();
    let mut index: Vec<HashMap<&[usize], TopTwo>> = vec![HashMap::new(); max_n];
    for (i, s) in stripped.iter().enumerate() {
        for (n, table) in index.iter_mut().enumerate() {
            for (g, c) in ngram_counts(s, n + 1) {
                table.entry(g).or_default().push(c, i);
            }
        }
    }
    let lengths: Vec<usize> = stripped.iter().map(Vec::len).collect();
    let scores = par_chunk_map(&stripped, 64, |start, chunk| {
        chunk
            .iter()
            .enumerate()
            .map(|(k, cand)| {
                let i = start + k;
                let others = lengths.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &l)| l);
                let ref_len = closest_length(cand.len(), others);
                bleu_core(cand, max_n, ref_len, |g| index[g.len() - 1].get(g).map_or(0, |t| t.excluding(i)))
            })
            .collect::<Vec<_>>()
    });
    let total: f64 = scores.iter().flatten().sum();
    Ok(total / samples.len() as f64)
}
