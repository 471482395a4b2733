use super::Generator;
use crate::corpus::LabeledSequence;
use crate::numerics::{AdamConfig, AdamState, ParamStore, RngStream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleFitConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub lr: f64,
}

impl Default for MleFitConfig {
    fn default() -> Self {
        MleFitConfig {
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MleFitLog {
    pub train_nll: Vec<f64>,
    pub valid_nll: Vec<f64>,
    pub best_epoch: usize,
    pub best_valid_nll: f64,
}

/// Epoch-at-a-time MLE pretraining with early stopping on validation NLL.
/// All fields are public so the state can be checkpointed and restored;
/// epoch `e` shuffles with stream `("mle-epoch", e)`, so a restored trainer
/// continues exactly where it stopped.
#[derive(Clone, Debug)]
pub struct MleTrainer {
    pub config: MleFitConfig,
    pub opt: AdamState,
    pub best: ParamStore,
    pub epoch: usize,
    pub since_best: usize,
    pub log: MleFitLog,
}

impl MleTrainer {
    pub fn new(gen: &Generator, valid: &[LabeledSequence], config: MleFitConfig) -> Result<Self> {
        if valid.is_empty() {
            return Err(Error::InsufficientData("MLE fit needs validation data".into()));
        }
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(MleTrainer {
            config,
            opt: AdamState::new(&gen.params, AdamConfig::with_lr(config.lr)),
            best: gen.params.clone(),
            epoch: 0,
            since_best: 0,
            log: MleFitLog { best_valid_nll: gen.mean_nll(valid)?, ..Default::default() },
        })
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.max_epochs || self.since_best >= self.config.patience
    }

    /// One pass over `train`; returns `(train NLL, validation NLL)`.
    pub fn run_epoch(
        &mut self,
        gen: &mut Generator,
        train: &[LabeledSequence],
        valid: &[LabeledSequence],
        rng: &RngStream,
    ) -> Result<(f64, f64)> {
        if train.is_empty() || valid.is_empty() {
            return Err(Error::InsufficientData("MLE fit needs train and validation data".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.derive("mle-epoch", self.epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<LabeledSequence> = chunk.iter().map(|&i| train[i].clone()).collect();
            total += gen.mle_step(&batch, &mut self.opt)? * batch.len() as f64;
        }
        let t = total / train.len() as f64;
        let v = gen.mean_nll(valid)?;
        self.epoch += 1;
        self.log.train_nll.push(t);
        self.log.valid_nll.push(v);
        if v < self.log.best_valid_nll {
            self.log.best_valid_nll = v;
            self.log.best_epoch = self.epoch;
            self.best = gen.params.clone();
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Ok((t, v))
    }

    /// Leaves `gen` holding the best-validation parameters.
    pub fn finish(self, gen: &mut Generator) -> MleFitLog {
        gen.params = self.best;
        self.log
    }
}

/// Runs an [`MleTrainer`] to completion.
pub fn fit_mle(
    gen: &mut Generator,
    train: &[LabeledSequence],
    valid: &[LabeledSequence],
    config: MleFitConfig,
    rng: &RngStream,
) -> Result<MleFitLog> {
    if train.is_empty() {
        return Err(Error::InsufficientData("MLE fit needs train and validation data".into()));
    }
    let mut trainer = MleTrainer::new(gen, valid, config)?;
    while !trainer.is_done() {
        trainer.run_epoch(gen, train, valid, rng)?;
    }
    Ok(trainer.finish(gen))
}
