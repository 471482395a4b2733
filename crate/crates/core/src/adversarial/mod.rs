//! Policy-gradient adversarial training: Monte-Carlo rollout rewards,
//! reward rescaling, baselines and the soft-updated rollout network.

mod session;

pub use session::{
    adversarial_train, AdversarialData, AdversarialSession, IterationMetrics, StepCounters, TrainSchedule,
    METRICS_HEADER,
};

use crate::corpus::LabeledSequence;
use crate::discriminators::SequenceScorer;
use crate::generator::{Generator, PreparedGenerator, SeqState};
use crate::numerics::{par_chunk_map, sigmoid, ParamStore, RngStream, Tensor};
use crate::{Error, Result};

/// Upper bound on completions enumerated per (sequence, prefix).
const MAX_ENUMERATION: usize = 1 << 20;
const ODA_CLAMP: f64 = 1.0 - 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RescaleMode {
    None,
    /// `R = D / (1 - D)`.
    Oda,
    /// `R = σ(δ (0.5 - rank / B))` per timestep column.
    Bra { delta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineMode {
    Off,
    BatchMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    MonteCarlo { k: usize },
    /// Exact expectation over every completion; tiny vocabularies only.
    Enumerate,
}

/// `batch × T` rewards; column `t` scores the choice of token `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTable {
    pub values: Tensor,
    pub rescale: RescaleMode,
    /// Per-column baseline that was subtracted, if any.
    pub baseline: Option<Vec<f64>>,
}

impl RewardTable {
    pub fn raw(values: Tensor) -> Self {
        RewardTable { values, rescale: RescaleMode::None, baseline: None }
    }
}

/// Completes `seq.tokens[..t]` `k` times from the rollout policy. At `t = T`
/// the input is returned unchanged `k` times.
pub fn mc_rollout(seq: &LabeledSequence, t: usize, k: usize, rollout: &Generator, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    let t_len = seq.tokens.len();
    if t == 0 || t > t_len || k == 0 {
        return Err(Error::InvalidArgument(format!("rollout needs 1 <= t <= {t_len} and K >= 1, got t={t}, K={k}")));
    }
    rollout.sequence_log_prob(seq)?;
    if t == t_len {
        return Ok(vec![seq.tokens.clone(); k]);
    }
    let prepared = rollout.prepare();
    let state = &prepared.states_along(seq)[t - 1];
    Ok((0..k).map(|_| prepared.complete(seq, t, state, rng)).collect())
}

/// `E[D(completion)]` over every completion of `tokens` (a prefix) from
/// `state`, which has already produced the distribution `probs` for the
/// next position.
fn expected_score(
    prepared: &PreparedGenerator,
    scorer: &dyn SequenceScorer,
    tokens: &mut Vec<usize>,
    t_len: usize,
    label: usize,
    state: &SeqState,
    probs: &[f64],
) -> f64 {
    let mut total = 0.0;
    for (x, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        tokens.push(x);
        let value = if tokens.len() == t_len {
            scorer.score(tokens, label)
        } else {
            let mut next = state.clone();
            let mut next_probs = vec![0.0; probs.len()];
            prepared.step(&mut next, x, label, &mut next_probs);
            expected_score(prepared, scorer, tokens, t_len, label, &next, &next_probs)
        };
        tokens.pop();
        total += p * value;
    }
    total
}

/// Raw rewards in `[0, 1]`: for `t < T` the mean discriminator score of the
/// rollout completions of `X_{1:t}`, for `t = T` the score of the sequence
/// itself. Sequence `i`, prefix `t` uses stream `("rollout", i·T + t)`.
pub fn compute_rewards(
    batch: &[LabeledSequence],
    scorer: &dyn SequenceScorer,
    rollout: &Generator,
    mode: RolloutMode,
    rng: &RngStream,
) -> Result<RewardTable> {
    let t_len = rollout.config().seq_len;
    for s in batch {
        if s.tokens.len() != t_len {
            return Err(Error::InvalidArgument(format!("sequence length {} != {t_len}", s.tokens.len())));
        }
        rollout.sequence_log_prob(s).map(|_| ())?;
    }
    match mode {
        RolloutMode::MonteCarlo { k: 0 } => return Err(Error::InvalidArgument("K must be >= 1".into())),
        RolloutMode::Enumerate => {
            let v = rollout.config().vocab_size as f64;
            if v.powi(t_len as i32 - 1) > MAX_ENUMERATION as f64 {
                return Err(Error::InvalidArgument(format!(
                    "enumeration over V={v}, T={t_len} is too large; use Monte-Carlo rollouts"
                )));
            }
        }
        _ => {}
    }
    let prepared = rollout.prepare();
    let v = rollout.config().vocab_size;
    let rows = par_chunk_map(batch, 4, |start, chunk| {
        chunk
            .iter()
            .enumerate()
            .map(|(j, seq)| {
                let i = start + j;
                let states = prepared.states_along(seq);
                let mut row = vec![0.0; t_len];
                for t in 1..t_len {
                    row[t - 1] = match mode {
                        RolloutMode::MonteCarlo { k } => {
                            let mut r = rng.derive("rollout", (i * t_len + t) as u64);
                            let total: f64 = (0..k)
                                .map(|_| scorer.score(&prepared.complete(seq, t, &states[t - 1], &mut r), seq.label))
                                .sum();
                            total / k as f64
                        }
                        RolloutMode::Enumerate => {
                            let mut st = states[t - 1].clone();
                            let mut probs = vec![0.0; v];
                            prepared.step(&mut st, seq.tokens[t - 1], seq.label, &mut probs);
                            let mut prefix = seq.tokens[..t].to_vec();
                            expected_score(&prepared, scorer, &mut prefix, t_len, seq.label, &st, &probs)
                        }
                    };
                }
                row[t_len - 1] = scorer.score(&seq.tokens, seq.label);
                row
            })
            .collect::<Vec<_>>()
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    let values = Tensor::from_rows(&rows);
    if values.as_slice().iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvalidArgument("discriminator reward outside [0, 1]".into()));
    }
    Ok(RewardTable::raw(values))
}

/// `r / (1 - r)` with `r` clamped to `[0, 1 - 1e-6]`. Evaluated as
/// `1 / (1/r - 1)`, which is exact at the usual probe values.
pub fn rescale_oda(r: f64) -> f64 {
    let r = r.clamp(0.0, ODA_CLAMP);
    if r == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 / r - 1.0)
}

/// Rank-based rescaling of one timestep column. Rank 1 is the highest raw
/// reward; ties keep input order.
pub fn rescale_bra(rewards: &[f64], delta: f64) -> Result<Vec<f64>> {
    let b = rewards.len();
    if b < 2 {
        return Err(Error::InvalidArgument("rank rescaling needs a batch of at least 2".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| rewards[j].total_cmp(&rewards[i]));
    let mut out = vec![0.0; b];
    for (pos, &i) in order.iter().enumerate() {
        let rank = (pos + 1) as f64;
        out[i] = sigmoid(delta * (0.5 - rank / b as f64));
    }
    Ok(out)
}

pub fn rescale(table: &RewardTable, mode: RescaleMode) -> Result<RewardTable> {
    let mut values = table.values.clone();
    match mode {
        RescaleMode::None => {}
        RescaleMode::Oda => values.as_mut_slice().iter_mut().for_each(|r| *r = rescale_oda(*r)),
        RescaleMode::Bra { delta } => {
            for t in 0..values.cols() {
                let column: Vec<f64> = (0..values.rows()).map(|i| values.get(i, t)).collect();
                for (i, r) in rescale_bra(&column, delta)?.into_iter().enumerate() {
                    values.set(i, t, r);
                }
            }
        }
    }
    if !values.is_finite() {
        return Err(Error::NonFinite("rescaled rewards".into()));
    }
    Ok(RewardTable { values, rescale: mode, baseline: table.baseline.clone() })
}

/// Subtracts the per-timestep batch mean (or nothing, when off).
pub fn subtract_baseline(table: &RewardTable, mode: BaselineMode) -> RewardTable {
    match mode {
        BaselineMode::Off => table.clone(),
        BaselineMode::BatchMean => {
            let mut values = table.values.clone();
            let (n, t_len) = values.shape();
            let mut means = vec![0.0; t_len];
            for (t, mean) in means.iter_mut().enumerate() {
                // Shifted by the first entry so a constant column centers to exactly 0.
                let first = values.get(0, t);
                *mean = first + (0..n).map(|i| values.get(i, t) - first).sum::<f64>() / n as f64;
                for i in 0..n {
                    values.set(i, t, values.get(i, t) - *mean);
                }
            }
            RewardTable { values, rescale: table.rescale, baseline: Some(means) }
        }
    }
}

/// `β' = (1 - α) θ + α β`, elementwise.
pub fn soft_update(theta: &ParamStore, beta: &ParamStore, alpha: f64) -> Result<ParamStore> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("soft-update rate {alpha} outside [0, 1]")));
    }
    if !theta.same_layout(beta) {
        return Err(Error::Shape { op: "soft_update", left: (theta.len(), theta.num_scalars()), right: (beta.len(), beta.num_scalars()) });
    }
    if alpha == 0.0 {
        return Ok(theta.clone());
    }
    if alpha == 1.0 {
        return Ok(beta.clone());
    }
    let mut out = beta.clone();
    for ((_, o), (_, th)) in out.iter_mut().zip(theta.iter()) {
        for (b, &t) in o.value.as_mut_slice().iter_mut().zip(th.value.as_slice()) {
            *b = (1.0 - alpha) * t + alpha * *b;
        }
        o.grad.fill(0.0);
    }
    Ok(out)
}

/// Teacher forcing: a plain MLE step on real text.
pub fn teacher_forcing_step(
    real: &[LabeledSequence],
    generator: &mut Generator,
    opt: &mut crate::numerics::AdamState,
) -> Result<f64> {
    generator.mle_step(real, opt)
}

#[cfg(test)]
mod tests;
