//! Conditional real/synthetic classifiers over frozen word embeddings.
//!
//! Every kind maps a sequence to a feature vector `f`, then a shared
//! condition head computes `D = σ([f; onehot(y)] · W + b)`. The head starts
//! at zero so an untrained discriminator outputs exactly 0.5. Training
//! minimizes the mean binary cross-entropy plus `λ/2 ‖W‖²`, with inverted
//! dropout on `f`.

mod birnn;
mod cnn;
mod fasttext;
mod lstm;

use std::fmt;
use std::str::FromStr;

pub use fasttext::bigram_bucket;

use crate::corpus::LabeledSequence;
use crate::numerics::{
    adam_step, init_fan_in, init_uniform, log_sigmoid, par_chunk_map, sigmoid, AdamState, Gradients, ParamId,
    ParamStore, RngStream, Tensor,
};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiscriminatorKind {
    FastText,
    Cnn,
    BiRnnAttention,
}

impl DiscriminatorKind {
    pub const ALL: [DiscriminatorKind; 3] = [Self::FastText, Self::Cnn, Self::BiRnnAttention];

    pub fn name(self) -> &'static str {
        match self {
            Self::FastText => "fasttext",
            Self::Cnn => "cnn",
            Self::BiRnnAttention => "birnn",
        }
    }
}

impl fmt::Display for DiscriminatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiscriminatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fasttext" => Ok(Self::FastText),
            "cnn" => Ok(Self::Cnn),
            "birnn" | "birnn-attention" | "rnn" => Ok(Self::BiRnnAttention),
            other => Err(Error::Config(format!("unknown discriminator kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub kind: DiscriminatorKind,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub bigram_buckets: usize,
    /// fastText only; with bigrams off the features are permutation-invariant.
    pub use_bigrams: bool,
    pub cnn_widths: Vec<usize>,
    pub cnn_filters: usize,
    pub rnn_hidden: usize,
    pub attn_dim: usize,
    pub dropout: f64,
    pub l2: f64,
    /// With the condition off the head ignores the label, which turns the
    /// model into a plain binary text classifier.
    pub use_condition: bool,
}

impl DiscriminatorConfig {
    pub fn new(kind: DiscriminatorKind, vocab_size: usize, seq_len: usize) -> Self {
        DiscriminatorConfig {
            kind,
            vocab_size,
            seq_len,
            bigram_buckets: 4096,
            use_bigrams: true,
            cnn_widths: vec![2, 3, 4],
            cnn_filters: 16,
            rnn_hidden: 32,
            attn_dim: 32,
            dropout: 0.2,
            l2: 0.1,
            use_condition: true,
        }
    }

    fn feature_dim(&self, embed_dim: usize) -> usize {
        match self.kind {
            DiscriminatorKind::FastText => embed_dim,
            DiscriminatorKind::Cnn => self.cnn_widths.len() * self.cnn_filters,
            DiscriminatorKind::BiRnnAttention => 2 * self.rnn_hidden,
        }
    }
}

#[derive(Clone, Debug)]
enum Arch {
    FastText { bigram: Option<ParamId> },
    Cnn { banks: Vec<(ParamId, ParamId)>, t_w: ParamId, t_b: ParamId, g_w: ParamId, g_b: ParamId },
    Rnn { fw_w: ParamId, fw_b: ParamId, bw_w: ParamId, bw_b: ParamId, att_w: ParamId, att_b: ParamId, att_u: ParamId },
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    /// Pretrained `V × E` table. Kept outside the parameter store, so no
    /// optimizer ever sees it.
    embedding: Tensor,
    pub params: ParamStore,
    arch: Arch,
    head_w: ParamId,
    head_b: ParamId,
}

enum FeatureCache {
    FastText,
    Cnn(cnn::Cache),
    Rnn(birnn::Cache),
}

/// Anything that maps a complete sequence and label to a probability of
/// being real.
pub trait SequenceScorer: Sync {
    fn score(&self, tokens: &[usize], label: usize) -> f64;
}

impl<F: Fn(&[usize], usize) -> f64 + Sync> SequenceScorer for F {
    fn score(&self, tokens: &[usize], label: usize) -> f64 {
        self(tokens, label)
    }
}

/// Logistic output kept strictly inside (0, 1).
fn prob_of(logit: f64) -> f64 {
    sigmoid(logit).clamp(1e-15, 1.0 - 1e-15)
}

fn many_mut<'a>(v: &'a mut [Tensor], ids: &[ParamId]) -> Vec<&'a mut Tensor> {
    let mut slots: Vec<Option<&'a mut Tensor>> = v.iter_mut().map(Some).collect();
    ids.iter().map(|id| slots[id.0].take().expect("distinct parameter ids")).collect()
}

impl Discriminator {
    /// Builds a discriminator around a pretrained embedding table. Feature
    /// weights are randomly initialized; the condition head is zero.
    pub fn new(config: DiscriminatorConfig, embedding: Tensor, rng: &RngStream) -> Result<Self> {
        if embedding.rows() != config.vocab_size || embedding.cols() == 0 {
            return Err(Error::Config(format!(
                "embedding table is {:?}, expected {} rows",
                embedding.shape(),
                config.vocab_size
            )));
        }
        if config.kind == DiscriminatorKind::Cnn {
            let widest = config.cnn_widths.iter().copied().max().unwrap_or(0);
            if widest == 0 || config.seq_len < widest {
                return Err(Error::Config(format!(
                    "sequence length {} is shorter than the widest filter {widest}",
                    config.seq_len
                )));
            }
        }
        if !(0.0..1.0).contains(&config.dropout) || config.l2 < 0.0 {
            return Err(Error::Config("dropout must be in [0,1) and l2 >= 0".into()));
        }
        let e = embedding.cols();
        let mut r = rng.derive("discriminator-init", 0);
        let mut params = ParamStore::new();
        let arch = match config.kind {
            DiscriminatorKind::FastText => Arch::FastText {
                bigram: if config.use_bigrams {
                    Some(params.insert("disc.bigram", init_uniform(config.bigram_buckets, e, 0.08, &mut r))?)
                } else {
                    None
                },
            },
            DiscriminatorKind::Cnn => {
                let mut banks = Vec::new();
                for &w in &config.cnn_widths {
                    let wt = params.insert(format!("disc.conv{w}.weight"), init_fan_in(w * e, config.cnn_filters, w * e, &mut r))?;
                    let bt = params.insert(format!("disc.conv{w}.bias"), Tensor::zeros(1, config.cnn_filters))?;
                    banks.push((wt, bt));
                }
                let f = config.feature_dim(e);
                Arch::Cnn {
                    banks,
                    t_w: params.insert("disc.highway.gate.weight", init_fan_in(f, f, f, &mut r))?,
                    t_b: params.insert("disc.highway.gate.bias", Tensor::filled(1, f, -1.0))?,
                    g_w: params.insert("disc.highway.transform.weight", init_fan_in(f, f, f, &mut r))?,
                    g_b: params.insert("disc.highway.transform.bias", Tensor::zeros(1, f))?,
                }
            }
            DiscriminatorKind::BiRnnAttention => {
                let h = config.rnn_hidden;
                let a = config.attn_dim;
                Arch::Rnn {
                    fw_w: params.insert("disc.lstm_fw.weight", init_uniform(h + e, 4 * h, 0.08, &mut r))?,
                    fw_b: params.insert("disc.lstm_fw.bias", Tensor::zeros(1, 4 * h))?,
                    bw_w: params.insert("disc.lstm_bw.weight", init_uniform(h + e, 4 * h, 0.08, &mut r))?,
                    bw_b: params.insert("disc.lstm_bw.bias", Tensor::zeros(1, 4 * h))?,
                    att_w: params.insert("disc.attention.weight", init_fan_in(2 * h, a, 2 * h, &mut r))?,
                    att_b: params.insert("disc.attention.bias", Tensor::zeros(1, a))?,
                    att_u: params.insert("disc.attention.context", init_fan_in(1, a, a, &mut r))?,
                }
            }
        };
        let f = config.feature_dim(e);
        let cond = if config.use_condition { 2 } else { 0 };
        let head_w = params.insert("disc.head.weight", Tensor::zeros(f + cond, 1))?;
        let head_b = params.insert("disc.head.bias", Tensor::zeros(1, 1))?;
        Ok(Discriminator {
            config,
            embedding,
            params,
            arch,
            head_w,
            head_b,
        })
    }

    /// Rebuilds from stored parameters, checking names and shapes.
    pub fn from_parts(config: DiscriminatorConfig, embedding: Tensor, params: ParamStore) -> Result<Self> {
        let mut d = Self::new(config, embedding, &RngStream::new(0, 0))?;
        if !d.params.same_layout(&params) {
            return Err(Error::Config("discriminator parameters do not match configuration".into()));
        }
        d.params = params;
        Ok(d)
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn kind(&self) -> DiscriminatorKind {
        self.config.kind
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim(self.embedding.cols())
    }

    fn check(&self, tokens: &[usize], label: usize) -> Result<()> {
        if label > 1 {
            return Err(Error::LabelOutOfRange(label));
        }
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        if let DiscriminatorKind::Cnn = self.config.kind {
            let widest = self.config.cnn_widths.iter().copied().max().unwrap_or(0);
            if tokens.len() < widest {
                return Err(Error::Config(format!("sequence of {} tokens is shorter than filter width {widest}", tokens.len())));
            }
        }
        match tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange { id, vocab: self.config.vocab_size }),
            None => Ok(()),
        }
    }

    fn cnn_parts(&self) -> (Vec<cnn::ConvBank<'_>>, cnn::Highway<'_>) {
        let Arch::Cnn { banks, t_w, t_b, g_w, g_b } = &self.arch else {
            unreachable!("cnn_parts on a non-CNN discriminator")
        };
        let p = &self.params;
        let conv = banks
            .iter()
            .zip(&self.config.cnn_widths)
            .map(|(&(w, b), &width)| cnn::ConvBank { width, weight: p.value(w), bias: p.value(b).row(0) })
            .collect();
        let hw = cnn::Highway {
            t_w: p.value(*t_w),
            t_b: p.value(*t_b).row(0),
            g_w: p.value(*g_w),
            g_b: p.value(*g_b).row(0),
        };
        (conv, hw)
    }

    fn rnn_weights(&self) -> birnn::Weights<'_> {
        let Arch::Rnn { fw_w, fw_b, bw_w, bw_b, att_w, att_b, att_u } = &self.arch else {
            unreachable!("rnn_weights on a non-recurrent discriminator")
        };
        let p = &self.params;
        birnn::Weights {
            fw_w: p.value(*fw_w),
            fw_b: p.value(*fw_b).row(0),
            bw_w: p.value(*bw_w),
            bw_b: p.value(*bw_b).row(0),
            att_w: p.value(*att_w),
            att_b: p.value(*att_b).row(0),
            att_u: p.value(*att_u).row(0),
            hidden: self.config.rnn_hidden,
        }
    }

    fn features(&self, tokens: &[usize]) -> (Vec<f64>, FeatureCache) {
        match &self.arch {
            Arch::FastText { bigram } => (
                fasttext::features(&self.embedding, bigram.map(|id| self.params.value(id)), tokens),
                FeatureCache::FastText,
            ),
            Arch::Cnn { .. } => {
                let (banks, hw) = self.cnn_parts();
                let (f, c) = cnn::features(&banks, &hw, &self.embedding, tokens);
                (f, FeatureCache::Cnn(c))
            }
            Arch::Rnn { .. } => {
                let (f, c) = birnn::features(&self.rnn_weights(), &self.embedding, tokens);
                (f, FeatureCache::Rnn(c))
            }
        }
    }

    fn features_backward(&self, tokens: &[usize], cache: &FeatureCache, df: &[f64], grads: &mut Gradients) {
        match (&self.arch, cache) {
            (Arch::FastText { bigram: Some(id) }, _) => fasttext::backward(grads.get_mut(*id), tokens, df),
            (Arch::FastText { bigram: None }, _) => {}
            (Arch::Cnn { banks, t_w, t_b, g_w, g_b }, FeatureCache::Cnn(c)) => {
                let mut ids: Vec<ParamId> = vec![*t_w, *t_b, *g_w, *g_b];
                for &(w, b) in banks {
                    ids.push(w);
                    ids.push(b);
                }
                let mut slots = many_mut(&mut grads.0, &ids).into_iter();
                let (tw, tb, gw, gb) = (slots.next().unwrap(), slots.next().unwrap(), slots.next().unwrap(), slots.next().unwrap());
                let mut bank_grads = Vec::new();
                while let (Some(w), Some(b)) = (slots.next(), slots.next()) {
                    bank_grads.push((w, b));
                }
                let (conv, hw) = self.cnn_parts();
                let g = cnn::Grads { banks: bank_grads, t_w: tw, t_b: tb, g_w: gw, g_b: gb };
                cnn::backward(&conv, &hw, &self.embedding, tokens, c, df, g);
            }
            (Arch::Rnn { fw_w, fw_b, bw_w, bw_b, att_w, att_b, att_u }, FeatureCache::Rnn(c)) => {
                let ids = [*fw_w, *fw_b, *bw_w, *bw_b, *att_w, *att_b, *att_u];
                let mut s = many_mut(&mut grads.0, &ids).into_iter();
                let g = birnn::Grads {
                    fw_w: s.next().unwrap(),
                    fw_b: s.next().unwrap(),
                    bw_w: s.next().unwrap(),
                    bw_b: s.next().unwrap(),
                    att_w: s.next().unwrap(),
                    att_b: s.next().unwrap(),
                    att_u: s.next().unwrap(),
                };
                birnn::backward(&self.rnn_weights(), &self.embedding, tokens, c, df, g);
            }
            _ => unreachable!("feature cache does not match architecture"),
        }
    }

    fn head_logit(&self, f: &[f64], label: usize) -> f64 {
        let w = self.params.value(self.head_w).as_slice();
        let n = f.len();
        let cond = if self.config.use_condition { w[n + label] } else { 0.0 };
        crate::numerics::dot(f, &w[..n]) + cond + self.params.value(self.head_b).as_slice()[0]
    }

    /// Evaluation-mode probability that `seq` is real given its label.
    pub fn prob(&self, seq: &LabeledSequence) -> Result<f64> {
        self.check(&seq.tokens, seq.label)?;
        let (f, _) = self.features(&seq.tokens);
        Ok(prob_of(self.head_logit(&f, seq.label)))
    }

    /// Attention weights over positions (recurrent kind only).
    pub fn attention_weights(&self, seq: &LabeledSequence) -> Result<Vec<f64>> {
        self.check(&seq.tokens, seq.label)?;
        match self.arch {
            Arch::Rnn { .. } => Ok(birnn::attention(&self.rnn_weights(), &self.embedding, &seq.tokens)),
            _ => Err(Error::InvalidArgument(format!("{} has no attention", self.kind()))),
        }
    }

    /// Cross-entropy for one example with optional dropout mask on the
    /// features; adds the unscaled gradient to `grads`.
    fn example(&self, seq: &LabeledSequence, target: f64, mask: Option<&[f64]>, grads: &mut Gradients) -> f64 {
        let (mut f, cache) = self.features(&seq.tokens);
        if let Some(m) = mask {
            f.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let logit = self.head_logit(&f, seq.label);
        let loss = -(target * log_sigmoid(logit) + (1.0 - target) * log_sigmoid(-logit));
        let dlogit = sigmoid(logit) - target;
        let n = f.len();
        let mut df: Vec<f64> = self.params.value(self.head_w).as_slice()[..n].iter().map(|w| w * dlogit).collect();
        {
            let gw = grads.get_mut(self.head_w).as_mut_slice();
            for k in 0..n {
                gw[k] += dlogit * f[k];
            }
            if self.config.use_condition {
                gw[n + seq.label] += dlogit;
            }
        }
        grads.get_mut(self.head_b).as_mut_slice()[0] += dlogit;
        if let Some(m) = mask {
            df.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        if df.iter().any(|&v| v != 0.0) {
            self.features_backward(&seq.tokens, &cache, &df, grads);
        }
        loss
    }

    /// Mean cross-entropy (real → 1, synthetic → 0) plus `λ/2 ‖W_head‖²` and
    /// its gradient. `dropout` enables training-mode masks drawn from
    /// per-example streams; `None` gives the deterministic objective.
    pub fn loss_and_gradients(
        &self,
        real: &[LabeledSequence],
        synthetic: &[LabeledSequence],
        dropout: Option<&RngStream>,
    ) -> Result<(Gradients, f64)> {
        if real.is_empty() || synthetic.is_empty() {
            return Err(Error::InsufficientData("discriminator step needs real and synthetic examples".into()));
        }
        let items: Vec<(&LabeledSequence, f64)> =
            real.iter().map(|s| (s, 1.0)).chain(synthetic.iter().map(|s| (s, 0.0))).collect();
        self.example_loss_and_gradients(&items, dropout)
    }

    /// Same objective over arbitrary `(sequence, target)` pairs.
    pub fn example_loss_and_gradients(
        &self,
        items: &[(&LabeledSequence, f64)],
        dropout: Option<&RngStream>,
    ) -> Result<(Gradients, f64)> {
        if items.is_empty() {
            return Err(Error::InsufficientData("discriminator step needs examples".into()));
        }
        for (s, target) in items {
            self.check(&s.tokens, s.label)?;
            if !(0.0..=1.0).contains(target) {
                return Err(Error::InvalidArgument(format!("target {target} outside [0, 1]")));
            }
        }
        let p = self.config.dropout;
        let dim = self.feature_dim();
        let parts = par_chunk_map(items, 16, |start, chunk| {
            let mut g = self.params.zeros_like();
            let mut loss = 0.0;
            for (k, &(seq, target)) in chunk.iter().enumerate() {
                let mask: Option<Vec<f64>> = dropout.filter(|_| p > 0.0).map(|rng| {
                    let mut r = rng.derive("dropout", (start + k) as u64);
                    (0..dim).map(|_| if r.uniform() < p { 0.0 } else { 1.0 / (1.0 - p) }).collect()
                });
                loss += self.example(seq, target, mask.as_deref(), &mut g);
            }
            (g, loss)
        });
        let mut grads = self.params.zeros_like();
        let mut loss = 0.0;
        for (g, l) in &parts {
            grads.add_assign(g);
            loss += l;
        }
        let inv = 1.0 / items.len() as f64;
        for t in &mut grads.0 {
            t.as_mut_slice().iter_mut().for_each(|v| *v *= inv);
        }
        let w = self.params.value(self.head_w);
        grads.get_mut(self.head_w).add_scaled(w, self.config.l2)?;
        let loss = loss * inv + 0.5 * self.config.l2 * w.sum_squares();
        if !loss.is_finite() {
            return Err(Error::NonFinite("discriminator loss".into()));
        }
        Ok((grads, loss))
    }

    fn apply(&mut self, grads: Result<(Gradients, f64)>, opt: &mut AdamState) -> Result<f64> {
        let (grads, loss) = grads.map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("d_train_step: {m}")),
            other => other,
        })?;
        self.params.zero_grad();
        self.params.accumulate(&grads, 1.0)?;
        adam_step(&mut self.params, opt).map_err(|e| match e {
            Error::Poisoned(p) => Error::NonFinite(format!("d_train_step: gradient of {p}")),
            other => other,
        })?;
        Ok(loss)
    }

    /// One optimizer step on a real and a synthetic batch. Returns the
    /// pre-update training loss.
    pub fn train_step(
        &mut self,
        real: &[LabeledSequence],
        synthetic: &[LabeledSequence],
        opt: &mut AdamState,
        rng: &RngStream,
    ) -> Result<f64> {
        let grads = self.loss_and_gradients(real, synthetic, Some(rng));
        self.apply(grads, opt)
    }

    /// `epochs` passes over `real` against `synthetic` in paired minibatches.
    /// Returns the mean loss of the last epoch.
    pub fn fit(
        &mut self,
        real: &[LabeledSequence],
        synthetic: &[LabeledSequence],
        epochs: usize,
        batch_size: usize,
        opt: &mut AdamState,
        rng: &RngStream,
    ) -> Result<f64> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let mut last = f64::NAN;
        let n = real.len().min(synthetic.len());
        let mut ri: Vec<usize> = (0..real.len()).collect();
        let mut si: Vec<usize> = (0..synthetic.len()).collect();
        for epoch in 0..epochs {
            let mut r = rng.derive("d-epoch", epoch as u64);
            r.shuffle(&mut ri);
            r.shuffle(&mut si);
            let mut total = 0.0;
            let mut batches = 0;
            for start in (0..n).step_by(batch_size) {
                let end = (start + batch_size).min(n);
                let rb: Vec<_> = ri[start..end].iter().map(|&i| real[i].clone()).collect();
                let sb: Vec<_> = si[start..end].iter().map(|&i| synthetic[i].clone()).collect();
                let step_rng = r.derive("d-step", batches as u64);
                total += self.train_step(&rb, &sb, opt, &step_rng)?;
                batches += 1;
            }
            last = total / batches.max(1) as f64;
        }
        Ok(last)
    }

    /// `epochs` passes over shuffled `(sequence, target)` minibatches.
    /// Returns the mean loss of the last epoch.
    pub fn fit_examples(
        &mut self,
        examples: &[(LabeledSequence, f64)],
        epochs: usize,
        batch_size: usize,
        opt: &mut AdamState,
        rng: &RngStream,
    ) -> Result<f64> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if examples.is_empty() {
            return Err(Error::InsufficientData("no training examples".into()));
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut last = f64::NAN;
        for epoch in 0..epochs {
            let mut r = rng.derive("d-epoch", epoch as u64);
            r.shuffle(&mut order);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(batch_size) {
                let items: Vec<(&LabeledSequence, f64)> = chunk.iter().map(|&i| (&examples[i].0, examples[i].1)).collect();
                let step_rng = r.derive("d-step", batches as u64);
                let grads = self.example_loss_and_gradients(&items, Some(&step_rng));
                total += self.apply(grads, opt)?;
                batches += 1;
            }
            last = total / batches as f64;
        }
        Ok(last)
    }

    /// Fraction of real items scored > 0.5 and synthetic items ≤ 0.5.
    pub fn accuracy(&self, real: &[LabeledSequence], synthetic: &[LabeledSequence]) -> Result<f64> {
        let scorer = self.prepare();
        let n = real.len() + synthetic.len();
        if n == 0 {
            return Err(Error::InsufficientData("accuracy of an empty set".into()));
        }
        for s in real.iter().chain(synthetic) {
            self.check(&s.tokens, s.label)?;
        }
        let hits = real.iter().filter(|s| scorer.score(&s.tokens, s.label) > 0.5).count()
            + synthetic.iter().filter(|s| scorer.score(&s.tokens, s.label) <= 0.5).count();
        Ok(hits as f64 / n as f64)
    }

    pub fn prepare(&self) -> PreparedDiscriminator<'_> {
        let tables = match &self.arch {
            Arch::FastText { .. } => Tables::None,
            Arch::Cnn { .. } => Tables::Cnn(cnn::conv_tables(&self.cnn_parts().0, &self.embedding)),
            Arch::Rnn { .. } => Tables::Rnn(birnn::tables(&self.rnn_weights(), &self.embedding)),
        };
        PreparedDiscriminator { d: self, tables }
    }
}

enum Tables {
    None,
    Cnn(cnn::ConvTables),
    Rnn(birnn::Tables),
}

/// Evaluation-mode scorer with per-token projections cached. Inputs are
/// assumed valid; use [`Discriminator::prob`] for checked scoring.
pub struct PreparedDiscriminator<'a> {
    d: &'a Discriminator,
    tables: Tables,
}

impl SequenceScorer for PreparedDiscriminator<'_> {
    fn score(&self, tokens: &[usize], label: usize) -> f64 {
        let d = self.d;
        let f = match &self.tables {
            Tables::None => d.features(tokens).0,
            Tables::Cnn(t) => {
                let (banks, hw) = d.cnn_parts();
                cnn::features_fast(&banks, &hw, t, tokens)
            }
            Tables::Rnn(t) => birnn::features_fast(&d.rnn_weights(), t, tokens),
        };
        prob_of(d.head_logit(&f, label))
    }
}
