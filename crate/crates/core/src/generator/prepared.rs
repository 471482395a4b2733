use super::Generator;
use crate::corpus::LabeledSequence;
use crate::numerics::{axpy, log_sum_exp, sigmoid, vec_mat_acc, RngStream, Tensor};

/// Read-only view of a generator with the token and label input
/// projections precomputed, for fast sampling, scoring and rollouts.
pub struct PreparedGenerator<'a> {
    gen: &'a Generator,
    /// `E W_x`, one `4H` row per token.
    x_table: Tensor,
    /// `C W_y + b`, one `4H` row per label.
    y_table: Tensor,
}

/// Single-sequence recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl<'a> PreparedGenerator<'a> {
    pub(super) fn new(gen: &'a Generator) -> Self {
        let cfg = gen.config();
        let ids = gen.ids();
        let (h, e) = (cfg.hidden_dim, cfg.embed_dim);
        let w = gen.params.value(ids.w_gates);
        let emb = gen.params.value(ids.tok_emb);
        let cond = gen.params.value(ids.cond_emb);
        let mut x_table = Tensor::zeros(cfg.vocab_size, 4 * h);
        for v in 0..cfg.vocab_size {
            let row = x_table.row_mut(v);
            for (k, &xv) in emb.row(v).iter().enumerate() {
                axpy(xv, w.row(h + k), row);
            }
        }
        let mut y_table = Tensor::zeros(2, 4 * h);
        for y in 0..2 {
            let row = y_table.row_mut(y);
            row.copy_from_slice(gen.params.value(ids.b_gates).row(0));
            for (k, &yv) in cond.row(y).iter().enumerate() {
                axpy(yv, w.row(h + e + k), row);
            }
        }
        PreparedGenerator { gen, x_table, y_table }
    }

    pub fn generator(&self) -> &Generator {
        self.gen
    }

    pub fn initial_state(&self) -> SeqState {
        let h = self.gen.config().hidden_dim;
        SeqState {
            h: vec![0.0; h],
            c: vec![0.0; h],
        }
    }

    /// Consumes `token` and writes the next-token distribution into `probs`.
    pub fn step(&self, state: &mut SeqState, token: usize, label: usize, probs: &mut [f64]) {
        let ids = self.gen.ids();
        let h = self.gen.config().hidden_dim;
        let w = self.gen.params.value(ids.w_gates);
        let mut a = self.y_table.row(label).to_vec();
        axpy(1.0, self.x_table.row(token), &mut a);
        for (k, &hv) in state.h.iter().enumerate() {
            if hv != 0.0 {
                axpy(hv, w.row(k), &mut a);
            }
        }
        for k in 0..h {
            let ig = sigmoid(a[k]);
            let fg = sigmoid(a[h + k]);
            let og = sigmoid(a[2 * h + k]);
            let g = a[3 * h + k].tanh();
            state.c[k] = fg * state.c[k] + ig * g;
            state.h[k] = og * state.c[k].tanh();
        }
        probs.copy_from_slice(self.gen.params.value(ids.b_out).row(0));
        vec_mat_acc(&state.h, self.gen.params.value(ids.w_out), probs);
        let lse = log_sum_exp(probs);
        probs.iter_mut().for_each(|p| *p = (*p - lse).exp());
    }

    fn input_at(&self, tokens: &[usize], t: usize) -> usize {
        if t == 0 {
            self.gen.config().bos
        } else {
            tokens[t - 1]
        }
    }

    /// Per-step `ln G(x_t | x_<t, y)`; PAD targets contribute 0.
    pub fn step_log_probs(&self, seq: &LabeledSequence) -> Vec<f64> {
        let cfg = self.gen.config();
        let mut state = self.initial_state();
        let mut probs = vec![0.0; cfg.vocab_size];
        (0..seq.tokens.len())
            .map(|t| {
                self.step(&mut state, self.input_at(&seq.tokens, t), seq.label, &mut probs);
                let tok = seq.tokens[t];
                if Some(tok) == cfg.pad {
                    0.0
                } else {
                    probs[tok].ln()
                }
            })
            .collect()
    }

    /// Distribution of the token following `prefix` (which may be empty).
    pub fn next_probs(&self, prefix: &[usize], label: usize) -> Vec<f64> {
        let mut state = self.initial_state();
        let mut probs = vec![0.0; self.gen.config().vocab_size];
        for t in 0..=prefix.len() {
            self.step(&mut state, self.input_at(prefix, t), label, &mut probs);
        }
        probs
    }

    pub fn sample(&self, label: usize, rng: &mut RngStream) -> LabeledSequence {
        let t_len = self.gen.config().seq_len;
        let mut state = self.initial_state();
        let mut probs = vec![0.0; self.gen.config().vocab_size];
        let mut tokens = Vec::with_capacity(t_len);
        for t in 0..t_len {
            self.step(&mut state, self.input_at(&tokens, t), label, &mut probs);
            tokens.push(rng.categorical(&probs));
        }
        LabeledSequence { label, tokens }
    }

    /// `states[t]` is the state after consuming the inputs of steps `0..=t`,
    /// i.e. the state that produced the distribution over `tokens[t]`.
    pub fn states_along(&self, seq: &LabeledSequence) -> Vec<SeqState> {
        let mut state = self.initial_state();
        let mut probs = vec![0.0; self.gen.config().vocab_size];
        (0..seq.tokens.len())
            .map(|t| {
                self.step(&mut state, self.input_at(&seq.tokens, t), seq.label, &mut probs);
                state.clone()
            })
            .collect()
    }

    /// Completes `seq.tokens[..prefix_len]` by sampling the remaining steps.
    /// `state` must be `states_along(seq)[prefix_len - 1]`.
    pub fn complete(&self, seq: &LabeledSequence, prefix_len: usize, state: &SeqState, rng: &mut RngStream) -> Vec<usize> {
        debug_assert!(prefix_len >= 1, "rollouts start after at least one token");
        let t_len = seq.tokens.len();
        let mut tokens = seq.tokens[..prefix_len].to_vec();
        let mut st = state.clone();
        let mut probs = vec![0.0; self.gen.config().vocab_size];
        for t in prefix_len..t_len {
            self.step(&mut st, tokens[t - 1], seq.label, &mut probs);
            tokens.push(rng.categorical(&probs));
        }
        tokens
    }
}
