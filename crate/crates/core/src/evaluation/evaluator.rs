use crate::corpus::{LabeledSequence, PAD};
use crate::discriminators::{Discriminator, DiscriminatorConfig, DiscriminatorKind, SequenceScorer};
use crate::numerics::{AdamConfig, AdamState, RngStream, Tensor};
use crate::{Error, Result};

/// Training recipe for the fresh evaluators and downstream classifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluatorConfig {
    pub kind: DiscriminatorKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Independent retrainings; every reported number is their median.
    pub seeds: usize,
    /// Share of each group used for training, the rest is held out.
    pub train_fraction: f64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        EvaluatorConfig { kind: DiscriminatorKind::Cnn, epochs: 20, batch_size: 32, lr: 1e-3, seeds: 3, train_fraction: 0.5 }
    }
}

impl EvaluatorConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.seeds == 0 {
            return Err(Error::Config("evaluator epochs, batch size and seeds must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("evaluator lr must be > 0 and train fraction in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Evaluator reliability errors and their mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EreScores {
    pub ere: [f64; 3],
    pub mean: f64,
}

impl EreScores {
    pub fn new(ere: [f64; 3]) -> Self {
        EreScores { ere, mean: ere.iter().sum::<f64>() / 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationScores {
    pub real: f64,
    pub synthetic: f64,
    pub mix: f64,
    pub warnings: Vec<String>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn shuffled(items: &[LabeledSequence], rng: &mut RngStream) -> Vec<LabeledSequence> {
    let mut v = items.to_vec();
    rng.shuffle(&mut v);
    v
}

/// Shuffles and splits into (train, held-out), both nonempty.
fn holdout(items: &[LabeledSequence], fraction: f64, rng: &mut RngStream) -> (Vec<LabeledSequence>, Vec<LabeledSequence>) {
    let mut v = shuffled(items, rng);
    let cut = ((items.len() as f64 * fraction).round() as usize).clamp(1, items.len() - 1);
    let test = v.split_off(cut);
    (v, test)
}

fn require(items: &[LabeledSequence], min: usize, what: &str) -> Result<usize> {
    if items.len() < min {
        return Err(Error::InsufficientData(format!("{what}: need at least {min} sequences, got {}", items.len())));
    }
    let t = items[0].tokens.len();
    if items.iter().any(|s| s.tokens.len() != t) {
        return Err(Error::InvalidArgument(format!("{what}: sequences differ in length")));
    }
    Ok(t)
}

fn fresh(embedding: &Tensor, seq_len: usize, use_condition: bool, cfg: &EvaluatorConfig, rng: &RngStream) -> Result<(Discriminator, AdamState)> {
    let dcfg = DiscriminatorConfig { use_condition, ..DiscriminatorConfig::new(cfg.kind, embedding.rows(), seq_len) };
    let d = Discriminator::new(dcfg, embedding.clone(), &rng.derive("evaluator-init", 0))?;
    let opt = AdamState::new(&d.params, AdamConfig::with_lr(cfg.lr));
    Ok((d, opt))
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Intercept `δ` with `Σ σ(l_i + δ) = Σ t_i`, or 0 when the targets are all
/// equal and no such point exists.
fn intercept(items: &[(f64, f64)]) -> f64 {
    let target: f64 = items.iter().map(|x| x.1).sum();
    if items.is_empty() || target <= 0.0 || target >= items.len() as f64 {
        return 0.0;
    }
    let excess = |d: f64| items.iter().map(|(l, _)| 1.0 / (1.0 + (-(l + d)).exp())).sum::<f64>() - target;
    let (mut lo, mut hi) = (-80.0, 80.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A trained classifier plus intercept corrections fitted on its own
/// training data. Minibatch training with dropout and L2 leaves the
/// intercept short of its optimum, where the mean predicted probability
/// equals the mean target; near chance level that residual offset alone
/// would push every item to one side of 0.5. Offsets are per label when
/// the model sees the label, otherwise shared.
struct Trained {
    d: Discriminator,
    offset: [f64; 2],
}

impl Trained {
    fn new(d: Discriminator, train: &[(&LabeledSequence, f64)]) -> Self {
        let per_label = d.config().use_condition;
        let scorer = d.prepare();
        let logits: Vec<(usize, f64, f64)> =
            train.iter().map(|(x, t)| (x.label, logit(scorer.score(&x.tokens, x.label)), *t)).collect();
        let group = |keep: &dyn Fn(usize) -> bool| -> f64 {
            let items: Vec<(f64, f64)> = logits.iter().filter(|x| keep(x.0)).map(|x| (x.1, x.2)).collect();
            intercept(&items)
        };
        let offset = if per_label { [group(&|l| l == 0), group(&|l| l == 1)] } else { [group(&|_| true); 2] };
        drop(scorer);
        Trained { d, offset }
    }

    /// Held-out accuracy with `pos` as the positive class.
    fn accuracy(&self, pos: &[LabeledSequence], neg: &[LabeledSequence]) -> f64 {
        let scorer = self.d.prepare();
        let hits = pos.iter().filter(|x| self.positive(&scorer, x)).count()
            + neg.iter().filter(|x| !self.positive(&scorer, x)).count();
        hits as f64 / (pos.len() + neg.len()) as f64
    }

    fn positive(&self, scorer: &impl SequenceScorer, x: &LabeledSequence) -> bool {
        logit(scorer.score(&x.tokens, x.label)) + self.offset[x.label] > 0.0
    }
}

/// A freshly initialized evaluator trained on `pos` (target 1) against
/// `neg` (target 0). Minibatches pair the two groups so the bias is not
/// pushed around by class proportions.
fn train_evaluator(pos: &[LabeledSequence], neg: &[LabeledSequence], embedding: &Tensor, cfg: &EvaluatorConfig, rng: &RngStream) -> Result<Trained> {
    let (mut d, mut opt) = fresh(embedding, pos[0].tokens.len(), true, cfg, rng)?;
    let half = (cfg.batch_size / 2).max(1);
    d.fit(pos, neg, cfg.epochs, half, &mut opt, &rng.derive("evaluator-fit", 0))?;
    let train: Vec<(&LabeledSequence, f64)> = pos.iter().map(|x| (x, 1.0)).chain(neg.iter().map(|x| (x, 0.0))).collect();
    Ok(Trained::new(d, &train))
}

/// Held-out accuracy of a fresh evaluator told to separate `pos` from `neg`.
fn separation_accuracy(
    pos: &[LabeledSequence],
    neg: &[LabeledSequence],
    embedding: &Tensor,
    cfg: &EvaluatorConfig,
    rng: &RngStream,
) -> Result<f64> {
    let mut r = rng.derive("holdout", 0);
    let (pos_train, pos_test) = holdout(pos, cfg.train_fraction, &mut r);
    let (neg_train, neg_test) = holdout(neg, cfg.train_fraction, &mut r);
    let t = train_evaluator(&pos_train, &neg_train, embedding, cfg, rng)?;
    Ok(t.accuracy(&pos_test, &neg_test))
}

/// Sequences of uniformly random ordinary tokens (ids `2..V`), carrying
/// the given labels.
pub fn random_token_sequences(labels: &[usize], vocab_size: usize, seq_len: usize, rng: &RngStream) -> Result<Vec<LabeledSequence>> {
    if vocab_size <= PAD + 1 {
        return Err(Error::InvalidArgument("vocabulary has no ordinary tokens".into()));
    }
    let mut r = rng.derive("random-tokens", 0);
    Ok(labels
        .iter()
        .map(|&label| LabeledSequence {
            label,
            tokens: (0..seq_len).map(|_| PAD + 1 + r.below(vocab_size - PAD - 1)).collect(),
        })
        .collect())
}

/// AdverSuc: fraction of held-out synthetic items a fresh evaluator,
/// trained on the remaining real-vs-synthetic items, classifies as real.
/// Median over `cfg.seeds` retrainings.
pub fn adversarial_eval(
    real: &[LabeledSequence],
    synthetic: &[LabeledSequence],
    embedding: &Tensor,
    cfg: &EvaluatorConfig,
    rng: &RngStream,
) -> Result<f64> {
    cfg.validate()?;
    let t = require(real, 4, "adversarial evaluation (real)")?;
    if require(synthetic, 4, "adversarial evaluation (synthetic)")? != t {
        return Err(Error::InvalidArgument("real and synthetic sequences differ in length".into()));
    }
    let mut runs = Vec::with_capacity(cfg.seeds);
    for s in 0..cfg.seeds {
        let r = rng.derive("adver-suc", s as u64);
        let mut h = r.derive("holdout", 0);
        let (real_train, _) = holdout(real, cfg.train_fraction, &mut h);
        let (synth_train, synth_test) = holdout(synthetic, cfg.train_fraction, &mut h);
        let t = train_evaluator(&real_train, &synth_train, embedding, cfg, &r)?;
        let scorer = t.d.prepare();
        let fooled = synth_test.iter().filter(|x| t.positive(&scorer, x)).count();
        runs.push(fooled as f64 / synth_test.len() as f64);
    }
    Ok(median(runs))
}

/// The three reliability probes: real/real and synthetic/synthetic splits
/// (ideal accuracy 0.5) and real vs random tokens (ideal accuracy 1).
pub fn ere_suite(
    real: &[LabeledSequence],
    synthetic: &[LabeledSequence],
    embedding: &Tensor,
    cfg: &EvaluatorConfig,
    rng: &RngStream,
) -> Result<EreScores> {
    cfg.validate()?;
    let t = require(real, 8, "ERE (real)")?;
    require(synthetic, 8, "ERE (synthetic)")?;
    let mut per_seed = [Vec::new(), Vec::new(), Vec::new()];
    for s in 0..cfg.seeds {
        let r = rng.derive("ere", s as u64);
        let real_shuffled = shuffled(real, &mut r.derive("split-real", 0));
        let (a, b) = real_shuffled.split_at(real.len() / 2);
        per_seed[0].push((separation_accuracy(a, b, embedding, cfg, &r.derive("scenario", 1))? - 0.5).abs());

        let synth_shuffled = shuffled(synthetic, &mut r.derive("split-synthetic", 0));
        let (a, b) = synth_shuffled.split_at(synthetic.len() / 2);
        per_seed[1].push((separation_accuracy(a, b, embedding, cfg, &r.derive("scenario", 2))? - 0.5).abs());

        let labels: Vec<usize> = real.iter().map(|x| x.label).collect();
        let noise = random_token_sequences(&labels, embedding.rows(), t, &r.derive("noise", 0))?;
        per_seed[2].push((separation_accuracy(real, &noise, embedding, cfg, &r.derive("scenario", 3))? - 1.0).abs());
    }
    let [a, b, c] = per_seed;
    Ok(EreScores::new([median(a), median(b), median(c)]))
}

fn imbalance_warning(name: &str, items: &[LabeledSequence]) -> Option<String> {
    let ones = items.iter().filter(|s| s.label == 1).count();
    let zeros = items.len() - ones;
    let (hi, lo) = (ones.max(zeros), ones.min(zeros));
    (hi > 9 * lo).then(|| format!("{name} training data is imbalanced ({zeros} label-0 vs {ones} label-1)"))
}

/// Test accuracy of label classifiers trained on real, synthetic and the
/// union of both. The classifier is the evaluator architecture with the
/// condition input removed and the label as target.
pub fn downstream_classification(
    real_train: &[LabeledSequence],
    synthetic_train: &[LabeledSequence],
    test: &[LabeledSequence],
    embedding: &Tensor,
    cfg: &EvaluatorConfig,
    rng: &RngStream,
) -> Result<ClassificationScores> {
    cfg.validate()?;
    let t = require(real_train, 2, "classification (real)")?;
    let mix: Vec<LabeledSequence> = real_train.iter().chain(synthetic_train).cloned().collect();
    require(synthetic_train, 2, "classification (synthetic)")?;
    require(&mix, 2, "classification (mix)")?;
    if require(test, 1, "classification (test)")? != t || mix.iter().any(|s| s.tokens.len() != t) {
        return Err(Error::InvalidArgument("training and test sequences differ in length".into()));
    }
    if let Some(s) = real_train.iter().chain(synthetic_train).chain(test).find(|s| s.label > 1) {
        return Err(Error::LabelOutOfRange(s.label));
    }
    let sources: [(&str, &[LabeledSequence]); 3] = [("real", real_train), ("synthetic", synthetic_train), ("mix", &mix)];
    let mut warnings = Vec::new();
    let mut acc = [0.0; 3];
    for (k, (name, data)) in sources.iter().enumerate() {
        warnings.extend(imbalance_warning(name, data));
        let examples: Vec<(LabeledSequence, f64)> = data.iter().map(|s| (s.clone(), s.label as f64)).collect();
        let mut runs = Vec::with_capacity(cfg.seeds);
        for s in 0..cfg.seeds {
            let r = rng.derive("classifier", (k * 1000 + s) as u64);
            let (mut d, mut opt) = fresh(embedding, t, false, cfg, &r)?;
            d.fit_examples(&examples, cfg.epochs, cfg.batch_size, &mut opt, &r.derive("classifier-fit", 0))?;
            let train: Vec<(&LabeledSequence, f64)> = examples.iter().map(|(x, t)| (x, *t)).collect();
            let t = Trained::new(d, &train);
            let scorer = t.d.prepare();
            let hits = test.iter().filter(|x| t.positive(&scorer, x) == (x.label == 1)).count();
            runs.push(hits as f64 / test.len() as f64);
        }
        acc[k] = median(runs);
    }
    Ok(ClassificationScores { real: acc[0], synthetic: acc[1], mix: acc[2], warnings })
}
