use std::time::Instant;

use super::{compute_rewards, rescale, soft_update, subtract_baseline, teacher_forcing_step, BaselineMode, RescaleMode, RolloutMode};
use crate::corpus::LabeledSequence;
use crate::discriminators::Discriminator;
use crate::generator::Generator;
use crate::numerics::{AdamConfig, AdamState, RngStream};
use crate::{Error, Result};

/// Wall-clock time is kept out of the metrics CSV so same-seed runs write
/// identical files.
pub const METRICS_HEADER: &str = "iteration,nll_test,mean_reward,d_loss,g_objective";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub iterations: usize,
    pub g_steps: usize,
    pub d_steps: usize,
    /// Passes over the d-step sample per d-step.
    pub d_epochs: usize,
    pub rollout: RolloutMode,
    /// Soft-update rate of the rollout network.
    pub alpha: f64,
    pub rescale: RescaleMode,
    pub baseline: BaselineMode,
    pub teacher_forcing: bool,
    pub batch_size: usize,
    /// Real and synthetic items drawn per d-step.
    pub d_samples: usize,
    pub d_batch_size: usize,
    pub g_lr: f64,
    pub d_lr: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            iterations: 30,
            g_steps: 5,
            d_steps: 5,
            d_epochs: 3,
            rollout: RolloutMode::MonteCarlo { k: 16 },
            alpha: 0.8,
            rescale: RescaleMode::Oda,
            baseline: BaselineMode::BatchMean,
            teacher_forcing: true,
            batch_size: 64,
            d_samples: 256,
            d_batch_size: 64,
            g_lr: 1e-4,
            d_lr: 1e-3,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("g_steps", self.g_steps),
            ("d_steps", self.d_steps),
            ("d_epochs", self.d_epochs),
            ("batch_size", self.batch_size),
            ("d_samples", self.d_samples),
            ("d_batch_size", self.d_batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("schedule: {name} must be >= 1")));
        }
        if let RolloutMode::MonteCarlo { k: 0 } = self.rollout {
            return Err(Error::Config("schedule: rollout count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("schedule: alpha {} outside [0, 1]", self.alpha)));
        }
        if let RescaleMode::Bra { delta } = self.rescale {
            if !(delta > 0.0) {
                return Err(Error::Config("schedule: BRA delta must be > 0".into()));
            }
        }
        if !(self.g_lr > 0.0 && self.d_lr > 0.0) {
            return Err(Error::Config("schedule: learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepCounters {
    pub pg_steps: u64,
    pub tf_steps: u64,
    pub d_steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub nll_test: f64,
    /// Mean raw (pre-rescaling) reward over the iteration's g-steps.
    pub mean_reward: f64,
    pub d_loss: f64,
    pub g_objective: f64,
    pub wall_seconds: f64,
    /// `‖β - θ‖∞` after the soft update.
    pub rollout_drift: f64,
    /// `‖θ_after - θ_before‖∞` over the iteration.
    pub theta_step: f64,
}

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.iteration, self.nll_test, self.mean_reward, self.d_loss, self.g_objective)
    }
}

pub struct AdversarialData<'a> {
    pub train: &'a [LabeledSequence],
    pub test: &'a [LabeledSequence],
}

/// Everything the adversarial loop mutates. Randomness for iteration `i` is
/// derived from `(seed, stream, i)`, so a session restored from its fields
/// continues exactly as an uninterrupted run would.
#[derive(Clone, Debug)]
pub struct AdversarialSession {
    pub schedule: TrainSchedule,
    pub generator: Generator,
    pub rollout: Generator,
    pub discriminator: Discriminator,
    pub g_opt: AdamState,
    pub d_opt: AdamState,
    pub iteration: usize,
    pub counters: StepCounters,
    pub log: Vec<IterationMetrics>,
    pub rng: RngStream,
}

fn context(iteration: usize, stage: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("iteration {iteration}, {stage}: {m}")),
        other => other,
    }
}

fn random_labels(train: &[LabeledSequence], n: usize, rng: &mut RngStream) -> Vec<usize> {
    (0..n).map(|_| train[rng.below(train.len())].label).collect()
}

fn random_subset(train: &[LabeledSequence], n: usize, rng: &mut RngStream) -> Vec<LabeledSequence> {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    rng.shuffle(&mut idx);
    idx.iter().cycle().take(n).map(|&i| train[i].clone()).collect()
}

impl AdversarialSession {
    /// Starts from a pretrained generator and discriminator; the rollout
    /// network begins as a copy of the generator.
    pub fn new(schedule: TrainSchedule, generator: Generator, discriminator: Discriminator, rng: &RngStream) -> Result<Self> {
        schedule.validate()?;
        let g_opt = AdamState::new(&generator.params, AdamConfig::with_lr(schedule.g_lr));
        let d_opt = AdamState::new(&discriminator.params, AdamConfig::with_lr(schedule.d_lr));
        Ok(AdversarialSession {
            rollout: generator.clone(),
            schedule,
            generator,
            discriminator,
            g_opt,
            d_opt,
            iteration: 0,
            counters: StepCounters::default(),
            log: Vec::new(),
            rng: rng.clone(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.schedule.iterations
    }

    /// One outer pass: g-steps (rollout rewards, policy gradient, optional
    /// teacher forcing), d-steps on fresh negatives, then the soft update.
    pub fn run_iteration(&mut self, data: &AdversarialData) -> Result<IterationMetrics> {
        if data.train.is_empty() || data.test.is_empty() {
            return Err(Error::InsufficientData("adversarial training needs train and test data".into()));
        }
        let start = Instant::now();
        let it = self.iteration;
        let sched = self.schedule.clone();
        let base = self.rng.derive("adv-iteration", it as u64);
        let theta_before = self.generator.params.clone();

        let mut reward_sum = 0.0;
        let mut objective_sum = 0.0;
        for s in 0..sched.g_steps {
            let r = base.derive("g-step", s as u64);
            let labels = random_labels(data.train, sched.batch_size, &mut r.derive("labels", 0));
            let batch = self.generator.sample_batch(&labels, &r.derive("sample", 0))?;
            let scorer = self.discriminator.prepare();
            let raw = compute_rewards(&batch, &scorer, &self.rollout, sched.rollout, &r.derive("rewards", 0))
                .map_err(context(it, "rewards"))?;
            reward_sum += raw.values.as_slice().iter().sum::<f64>() / raw.values.len() as f64;
            let rewards = subtract_baseline(&rescale(&raw, sched.rescale).map_err(context(it, "rescale"))?, sched.baseline);
            objective_sum += self
                .generator
                .policy_gradient_step(&batch, &rewards.values, &mut self.g_opt)
                .map_err(context(it, "policy gradient"))?;
            self.counters.pg_steps += 1;
            if sched.teacher_forcing {
                let real = random_subset(data.train, sched.batch_size, &mut r.derive("teacher", 0));
                teacher_forcing_step(&real, &mut self.generator, &mut self.g_opt).map_err(context(it, "teacher forcing"))?;
                self.counters.tf_steps += 1;
            }
        }

        let mut d_loss_sum = 0.0;
        for s in 0..sched.d_steps {
            let r = base.derive("d-step", s as u64);
            let labels = random_labels(data.train, sched.d_samples, &mut r.derive("labels", 0));
            let synthetic = self.generator.sample_batch(&labels, &r.derive("sample", 0))?;
            let real = random_subset(data.train, sched.d_samples, &mut r.derive("real", 0));
            d_loss_sum += self
                .discriminator
                .fit(&real, &synthetic, sched.d_epochs, sched.d_batch_size, &mut self.d_opt, &r.derive("fit", 0))
                .map_err(context(it, "discriminator"))?;
            self.counters.d_steps += 1;
        }

        self.rollout.params = soft_update(&self.generator.params, &self.rollout.params, sched.alpha)?;
        let nll_test = self.generator.mean_nll(data.test).map_err(context(it, "test NLL"))?;
        let metrics = IterationMetrics {
            iteration: it + 1,
            nll_test,
            mean_reward: reward_sum / sched.g_steps as f64,
            d_loss: d_loss_sum / sched.d_steps as f64,
            g_objective: objective_sum / sched.g_steps as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
            rollout_drift: self.rollout.params.max_abs_diff(&self.generator.params)?,
            theta_step: self.generator.params.max_abs_diff(&theta_before)?,
        };
        self.iteration += 1;
        self.log.push(metrics.clone());
        Ok(metrics)
    }
}

/// Runs the remaining iterations of `session`, calling `after_iteration`
/// (e.g. for checkpointing) after each one.
pub fn adversarial_train(
    session: &mut AdversarialSession,
    data: &AdversarialData,
    mut after_iteration: impl FnMut(&AdversarialSession) -> Result<()>,
) -> Result<()> {
    while !session.is_finished() {
        session.run_iteration(data)?;
        after_iteration(session)?;
    }
    Ok(())
}
