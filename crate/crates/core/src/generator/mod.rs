//! Conditional LSTM generator.
//!
//! The label embedding is concatenated to the LSTM input at every step:
//! `z_t = [h_{t-1}; E[x_{t-1}]; C[y]]`, gates `[i f o g] = z_t W + b`,
//! `c_t = σ(f) c_{t-1} + σ(i) tanh(g)`, `h_t = σ(o) tanh(c_t)`, and the
//! next-token distribution is `softmax(h_t W_out + b_out)`. Step 1 is fed
//! [`BOS`](crate::corpus::BOS).

mod prepared;
mod train;

pub use prepared::{PreparedGenerator, SeqState};
pub use train::{fit_mle, MleFitConfig, MleFitLog, MleTrainer};

use crate::corpus::{LabeledSequence, BOS, PAD};
use crate::numerics::{
    adam_step, axpy, init_fan_in, init_uniform, log_sum_exp, mat_vec_acc, outer_acc,
    par_chunk_map, sigmoid, vec_mat_acc, AdamState, Gradients, ParamId, ParamStore, RngStream,
    Tensor,
};
use crate::{Error, Result};

/// Global gradient-norm cap for MLE and policy-gradient updates.
pub const GRAD_CLIP: f64 = 5.0;
const CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub cond_dim: usize,
    pub seq_len: usize,
    pub bos: usize,
    /// Target id whose steps are excluded from likelihoods and gradients.
    pub pad: Option<usize>,
}

impl GeneratorConfig {
    pub fn new(vocab_size: usize, seq_len: usize) -> Self {
        GeneratorConfig {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 32,
            cond_dim: 8,
            seq_len,
            bos: BOS,
            pad: Some(PAD),
        }
    }

    fn input_dim(&self) -> usize {
        self.hidden_dim + self.embed_dim + self.cond_dim
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GenIds {
    pub tok_emb: ParamId,
    pub cond_emb: ParamId,
    pub w_gates: ParamId,
    pub b_gates: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    pub params: ParamStore,
    ids: GenIds,
}

/// Batched recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Tensor::zeros(batch, hidden),
            c: Tensor::zeros(batch, hidden),
        }
    }
}

pub const PARAM_NAMES: [&str; 6] = [
    "gen.token_embedding",
    "gen.cond_embedding",
    "gen.lstm.weight",
    "gen.lstm.bias",
    "gen.out.weight",
    "gen.out.bias",
];

impl Generator {
    /// Randomly initialized generator: uniform ±0.08 for embeddings and
    /// recurrent weights, fan-in normal for the output projection, zero
    /// biases.
    pub fn new(config: GeneratorConfig, rng: &RngStream) -> Result<Self> {
        let mut r = rng.derive("generator-init", 0);
        let (v, e, h, c) = (config.vocab_size, config.embed_dim, config.hidden_dim, config.cond_dim);
        let tensors = [
            init_uniform(v, e, 0.08, &mut r),
            init_uniform(2, c, 0.08, &mut r),
            init_uniform(config.input_dim(), 4 * h, 0.08, &mut r),
            Tensor::zeros(1, 4 * h),
            init_fan_in(h, v, h, &mut r),
            Tensor::zeros(1, v),
        ];
        Self::from_tensors(config, tensors.into())
    }

    /// All-zero weights: a uniform next-token distribution everywhere.
    pub fn zeros(config: GeneratorConfig) -> Result<Self> {
        let (v, e, h, c) = (config.vocab_size, config.embed_dim, config.hidden_dim, config.cond_dim);
        Self::from_tensors(
            config,
            vec![
                Tensor::zeros(v, e),
                Tensor::zeros(2, c),
                Tensor::zeros(config.input_dim(), 4 * h),
                Tensor::zeros(1, 4 * h),
                Tensor::zeros(h, v),
                Tensor::zeros(1, v),
            ],
        )
    }

    fn from_tensors(config: GeneratorConfig, tensors: Vec<Tensor>) -> Result<Self> {
        if config.vocab_size < 2 || config.seq_len == 0 || config.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!("bad generator config {config:?}")));
        }
        let mut params = ParamStore::new();
        let mut ids = Vec::new();
        for (name, t) in PARAM_NAMES.iter().zip(tensors) {
            ids.push(params.insert(*name, t)?);
        }
        Ok(Generator {
            config,
            params,
            ids: GenIds {
                tok_emb: ids[0],
                cond_emb: ids[1],
                w_gates: ids[2],
                b_gates: ids[3],
                w_out: ids[4],
                b_out: ids[5],
            },
        })
    }

    /// Rebuilds a generator around an existing parameter store (e.g. from a
    /// checkpoint), checking names and shapes.
    pub fn from_params(config: GeneratorConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::zeros(config)?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Config("generator parameters do not match configuration".into()));
        }
        Ok(Generator {
            config,
            params,
            ids: reference.ids,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub(crate) fn ids(&self) -> GenIds {
        self.ids
    }

    fn check_token(&self, id: usize) -> Result<()> {
        if id >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn check_sequence(&self, seq: &LabeledSequence) -> Result<()> {
        if seq.label > 1 {
            return Err(Error::LabelOutOfRange(seq.label));
        }
        if seq.tokens.len() != self.config.seq_len {
            return Err(Error::InvalidArgument(format!(
                "sequence has {} tokens, generator expects {}",
                seq.tokens.len(),
                self.config.seq_len
            )));
        }
        seq.tokens.iter().try_for_each(|&t| self.check_token(t))
    }

    /// One batched LSTM step: consumes tokens `x` under labels `y` and returns
    /// the new state with next-token logits.
    pub fn lstm_step(&self, state: &LstmState, x: &[usize], y: &[usize]) -> Result<(LstmState, Tensor)> {
        let b = x.len();
        let h = self.config.hidden_dim;
        if y.len() != b || state.h.shape() != (b, h) || state.c.shape() != (b, h) {
            return Err(Error::Shape {
                op: "lstm_step",
                left: state.h.shape(),
                right: (x.len(), y.len()),
            });
        }
        let emb = self.params.value(self.ids.tok_emb);
        let cond = self.params.value(self.ids.cond_emb);
        let mut z = Tensor::zeros(b, self.config.input_dim());
        for i in 0..b {
            self.check_token(x[i])?;
            if y[i] > 1 {
                return Err(Error::LabelOutOfRange(y[i]));
            }
            let row = z.row_mut(i);
            row[..h].copy_from_slice(state.h.row(i));
            row[h..h + self.config.embed_dim].copy_from_slice(emb.row(x[i]));
            row[h + self.config.embed_dim..].copy_from_slice(cond.row(y[i]));
        }
        let mut gates = z.matmul(self.params.value(self.ids.w_gates))?;
        let bias = self.params.value(self.ids.b_gates).row(0);
        let mut next = LstmState::zeros(b, h);
        for i in 0..b {
            let g = gates.row_mut(i);
            axpy(1.0, bias, g);
            for k in 0..h {
                let ig = sigmoid(g[k]);
                let fg = sigmoid(g[h + k]);
                let og = sigmoid(g[2 * h + k]);
                let cand = g[3 * h + k].tanh();
                let c = fg * state.c.get(i, k) + ig * cand;
                next.c.set(i, k, c);
                next.h.set(i, k, og * c.tanh());
            }
        }
        let mut logits = next.h.matmul(self.params.value(self.ids.w_out))?;
        let b_out = self.params.value(self.ids.b_out).row(0);
        for i in 0..b {
            axpy(1.0, b_out, logits.row_mut(i));
        }
        Ok((next, logits))
    }

    pub fn prepare(&self) -> PreparedGenerator<'_> {
        PreparedGenerator::new(self)
    }

    /// Per-step `ln G(x_t | x_<t, y)`; PAD targets contribute 0.
    pub fn step_log_probs(&self, seq: &LabeledSequence) -> Result<Vec<f64>> {
        self.check_sequence(seq)?;
        Ok(self.prepare().step_log_probs(seq))
    }

    /// `Σ_t ln G(x_t | x_<t, y)` over non-PAD steps.
    pub fn sequence_log_prob(&self, seq: &LabeledSequence) -> Result<f64> {
        Ok(self.step_log_probs(seq)?.iter().sum())
    }

    /// Ancestral sample of `seq_len` tokens at temperature 1.
    pub fn sample(&self, label: usize, rng: &mut RngStream) -> Result<LabeledSequence> {
        if label > 1 {
            return Err(Error::LabelOutOfRange(label));
        }
        Ok(self.prepare().sample(label, rng))
    }

    /// Samples one sequence per label; item `i` uses stream `(purpose, i)`.
    pub fn sample_batch(&self, labels: &[usize], rng: &RngStream) -> Result<Vec<LabeledSequence>> {
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::LabelOutOfRange(bad));
        }
        let prepared = self.prepare();
        let chunks = par_chunk_map(labels, CHUNK, |start, chunk| {
            chunk
                .iter()
                .enumerate()
                .map(|(k, &y)| prepared.sample(y, &mut rng.derive("sample", (start + k) as u64)))
                .collect::<Vec<_>>()
        });
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Backpropagates `loss = -Σ_t w_t ln G(x_t | ...)` for one sequence into
    /// `grads`; returns `Σ_t w_t ln G(x_t | ...)`. PAD targets get weight 0.
    fn accumulate_sequence(&self, seq: &LabeledSequence, weights: &[f64], grads: &mut Gradients) -> f64 {
        let cfg = &self.config;
        let (h_dim, e_dim, v) = (cfg.hidden_dim, cfg.embed_dim, cfg.vocab_size);
        let w_eff: Vec<f64> = seq
            .tokens
            .iter()
            .zip(weights)
            .map(|(&tok, &w)| if Some(tok) == cfg.pad { 0.0 } else { w })
            .collect();
        let Some(last) = w_eff.iter().rposition(|&w| w != 0.0) else {
            return 0.0;
        };
        let steps = last + 1;

        let emb = self.params.value(self.ids.tok_emb);
        let cond = self.params.value(self.ids.cond_emb);
        let w_gates = self.params.value(self.ids.w_gates);
        let b_gates = self.params.value(self.ids.b_gates).row(0);
        let w_out = self.params.value(self.ids.w_out);
        let b_out = self.params.value(self.ids.b_out).row(0);
        let y_emb = cond.row(seq.label);

        // Forward, keeping activations for the backward sweep.
        let mut acts = vec![0.0; steps * 4 * h_dim]; // i f o g (post-nonlinearity)
        let mut cs = vec![0.0; (steps + 1) * h_dim]; // cs[0] = c_0
        let mut tcs = vec![0.0; steps * h_dim];
        let mut hs = vec![0.0; (steps + 1) * h_dim]; // hs[0] = h_0
        let mut probs = vec![0.0; steps * v];
        let mut objective = 0.0;
        let input_tok = |t: usize| if t == 0 { cfg.bos } else { seq.tokens[t - 1] };
        for t in 0..steps {
            let a = &mut acts[t * 4 * h_dim..(t + 1) * 4 * h_dim];
            a.copy_from_slice(b_gates);
            let (h_prev, rest) = hs.split_at_mut((t + 1) * h_dim);
            let h_prev = &h_prev[t * h_dim..];
            // z W as three row-blocks of W.
            for (k, &hv) in h_prev.iter().enumerate() {
                if hv != 0.0 {
                    axpy(hv, w_gates.row(k), a);
                }
            }
            for (k, &xv) in emb.row(input_tok(t)).iter().enumerate() {
                axpy(xv, w_gates.row(h_dim + k), a);
            }
            for (k, &yv) in y_emb.iter().enumerate() {
                axpy(yv, w_gates.row(h_dim + e_dim + k), a);
            }
            for k in 0..h_dim {
                a[k] = sigmoid(a[k]);
                a[h_dim + k] = sigmoid(a[h_dim + k]);
                a[2 * h_dim + k] = sigmoid(a[2 * h_dim + k]);
                a[3 * h_dim + k] = a[3 * h_dim + k].tanh();
            }
            let h_new = &mut rest[..h_dim];
            for k in 0..h_dim {
                let c = a[h_dim + k] * cs[t * h_dim + k] + a[k] * a[3 * h_dim + k];
                cs[(t + 1) * h_dim + k] = c;
                let tc = c.tanh();
                tcs[t * h_dim + k] = tc;
                h_new[k] = a[2 * h_dim + k] * tc;
            }
            if w_eff[t] != 0.0 {
                let p = &mut probs[t * v..(t + 1) * v];
                p.copy_from_slice(b_out);
                vec_mat_acc(h_new, w_out, p);
                let lse = log_sum_exp(p);
                objective += w_eff[t] * (p[seq.tokens[t]] - lse);
                p.iter_mut().for_each(|x| *x = (*x - lse).exp());
            }
        }

        // Backward through time.
        let mut dh_next = vec![0.0; h_dim];
        let mut dc_next = vec![0.0; h_dim];
        let mut dh = vec![0.0; h_dim];
        let mut da = vec![0.0; 4 * h_dim];
        let mut dz = vec![0.0; cfg.input_dim()];
        for t in (0..steps).rev() {
            let h_t = &hs[(t + 1) * h_dim..(t + 2) * h_dim];
            dh.copy_from_slice(&dh_next);
            if w_eff[t] != 0.0 {
                let mut dlogits = probs[t * v..(t + 1) * v].to_vec();
                dlogits[seq.tokens[t]] -= 1.0;
                dlogits.iter_mut().for_each(|x| *x *= w_eff[t]);
                outer_acc(h_t, &dlogits, grads.get_mut(self.ids.w_out));
                axpy(1.0, &dlogits, grads.get_mut(self.ids.b_out).as_mut_slice());
                mat_vec_acc(w_out, &dlogits, &mut dh);
            }
            let a = &acts[t * 4 * h_dim..(t + 1) * 4 * h_dim];
            let c_prev = &cs[t * h_dim..(t + 1) * h_dim];
            for k in 0..h_dim {
                let (ig, fg, og, g) = (a[k], a[h_dim + k], a[2 * h_dim + k], a[3 * h_dim + k]);
                let tc = tcs[t * h_dim + k];
                let d_o = dh[k] * tc;
                let dc = dh[k] * og * (1.0 - tc * tc) + dc_next[k];
                da[k] = dc * g * ig * (1.0 - ig);
                da[h_dim + k] = dc * c_prev[k] * fg * (1.0 - fg);
                da[2 * h_dim + k] = d_o * og * (1.0 - og);
                da[3 * h_dim + k] = dc * ig * (1.0 - g * g);
                dc_next[k] = dc * fg;
            }
            let h_prev = &hs[t * h_dim..(t + 1) * h_dim];
            let x_in = input_tok(t);
            {
                let gw = grads.get_mut(self.ids.w_gates);
                for (k, &hv) in h_prev.iter().enumerate() {
                    if hv != 0.0 {
                        axpy(hv, &da, gw.row_mut(k));
                    }
                }
                for (k, &xv) in emb.row(x_in).iter().enumerate() {
                    axpy(xv, &da, gw.row_mut(h_dim + k));
                }
                for (k, &yv) in y_emb.iter().enumerate() {
                    axpy(yv, &da, gw.row_mut(h_dim + e_dim + k));
                }
            }
            axpy(1.0, &da, grads.get_mut(self.ids.b_gates).as_mut_slice());
            dz.iter_mut().for_each(|x| *x = 0.0);
            mat_vec_acc(w_gates, &da, &mut dz);
            dh_next.copy_from_slice(&dz[..h_dim]);
            axpy(1.0, &dz[h_dim..h_dim + e_dim], grads.get_mut(self.ids.tok_emb).row_mut(x_in));
            axpy(1.0, &dz[h_dim + e_dim..], grads.get_mut(self.ids.cond_emb).row_mut(seq.label));
        }
        objective
    }

    /// Gradient of `-(1/B) Σ_b Σ_t w_bt ln G(x_bt | ...)` and the mean
    /// weighted log-likelihood `(1/B) Σ_b Σ_t w_bt ln G`.
    pub fn weighted_gradients(&self, batch: &[LabeledSequence], weights: &Tensor) -> Result<(Gradients, f64)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if weights.shape() != (batch.len(), self.config.seq_len) {
            return Err(Error::Shape {
                op: "weighted_gradients",
                left: (batch.len(), self.config.seq_len),
                right: weights.shape(),
            });
        }
        for s in batch {
            self.check_sequence(s)?;
        }
        let indices: Vec<usize> = (0..batch.len()).collect();
        let parts = par_chunk_map(&indices, CHUNK, |_, chunk| {
            let mut g = self.params.zeros_like();
            let mut obj = 0.0;
            for &i in chunk {
                obj += self.accumulate_sequence(&batch[i], weights.row(i), &mut g);
            }
            (g, obj)
        });
        let mut total = self.params.zeros_like();
        let mut objective = 0.0;
        for (g, o) in &parts {
            total.add_assign(g);
            objective += o;
        }
        let inv = 1.0 / batch.len() as f64;
        for t in &mut total.0 {
            t.as_mut_slice().iter_mut().for_each(|x| *x *= inv);
        }
        Ok((total, objective * inv))
    }

    /// Gradient of the mean sequence NLL; returns it with the mean NLL.
    pub fn mle_gradients(&self, batch: &[LabeledSequence]) -> Result<(Gradients, f64)> {
        let ones = Tensor::filled(batch.len(), self.config.seq_len, 1.0);
        let (g, ll) = self.weighted_gradients(batch, &ones)?;
        Ok((g, -ll))
    }

    fn apply(&mut self, grads: &Gradients, opt: &mut AdamState) -> Result<()> {
        self.params.zero_grad();
        self.params.accumulate(grads, 1.0)?;
        self.params.clip_grad_norm(GRAD_CLIP);
        adam_step(&mut self.params, opt)
    }

    /// One teacher-forced MLE update. Returns the pre-update mean NLL per
    /// sequence.
    pub fn mle_step(&mut self, batch: &[LabeledSequence], opt: &mut AdamState) -> Result<f64> {
        let (grads, nll) = self.mle_gradients(batch)?;
        if !nll.is_finite() {
            return Err(Error::NonFinite("mle_step: batch NLL".into()));
        }
        self.apply(&grads, opt).map_err(|e| match e {
            Error::Poisoned(p) => Error::NonFinite(format!("mle_step: gradient of {p}")),
            other => other,
        })?;
        Ok(nll)
    }

    /// One REINFORCE update ascending `E[Σ_t R_t ln G(x_t | ...)]`. `rewards`
    /// is `batch × seq_len`. Returns the pre-update objective (batch mean).
    pub fn policy_gradient_step(
        &mut self,
        batch: &[LabeledSequence],
        rewards: &Tensor,
        opt: &mut AdamState,
    ) -> Result<f64> {
        if !rewards.is_finite() {
            return Err(Error::NonFinite("policy_gradient_step: rewards".into()));
        }
        let (grads, objective) = self.weighted_gradients(batch, rewards)?;
        self.apply(&grads, opt).map_err(|e| match e {
            Error::Poisoned(p) => Error::NonFinite(format!("policy_gradient_step: gradient of {p}")),
            other => other,
        })?;
        Ok(objective)
    }

    /// Mean NLL per sequence over `data` (no update).
    pub fn mean_nll(&self, data: &[LabeledSequence]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InsufficientData("empty evaluation set".into()));
        }
        for s in data {
            self.check_sequence(s)?;
        }
        let prepared = self.prepare();
        let parts = par_chunk_map(data, 32, |_, chunk| {
            chunk
                .iter()
                .map(|s| -prepared.step_log_probs(s).iter().sum::<f64>())
                .sum::<f64>()
        });
        let total: f64 = parts.iter().sum();
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("mean NLL".into()));
        }
        Ok(mean)
    }
}

#[cfg(test)]
mod tests;
