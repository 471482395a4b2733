//! The experiment pipeline behind each subcommand. Every step is a
//! function of the run configuration and its seed; progress lives in
//! checkpoints so an interrupted step resumes exactly.

use std::path::{Path, PathBuf};

use condgan_core::adversarial::{AdversarialData, AdversarialSession, IterationMetrics, StepCounters, METRICS_HEADER};
use condgan_core::corpus::{
    pretrain_embeddings, read_corpus, split, write_corpus, Grammar, LabeledSequence, SkipGramConfig, SplitDataset,
    Vocab, BOS, DEFAULT_RATIOS, PAD,
};
use condgan_core::discriminators::{Discriminator, DiscriminatorConfig};
use condgan_core::evaluation::{
    adversarial_eval, downstream_classification, ere_suite, nll_test, self_bleu, MacroMetrics, MetricsReport, MicroMetrics,
    Suite, SuiteResult, BLEU_MAX_N,
};
use condgan_core::generator::{Generator, GeneratorConfig, MleTrainer};
use condgan_core::numerics::{AdamConfig, AdamState, RngStream, Tensor};
use condgan_core::Error as CoreError;

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::rundir::{CsvLog, RunDir};

pub const CONFIG_FILE: &str = "config.txt";
pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";
pub const ADVERSARIAL: &str = "adversarial";

pub struct Data {
    pub vocab: Vocab,
    pub split: SplitDataset,
    pub grammar: Option<Grammar>,
}

fn base_rng(cfg: &RunConfig) -> RngStream {
    RngStream::new(cfg.seed(), 0)
}

/// Loads a grammar preset by name, otherwise parses the named file.
pub fn load_grammar(spec: &str, seq_len: usize) -> CliResult<Grammar> {
    match spec {
        "separable" | "overlapping" => Ok(Grammar::preset(spec, seq_len)?),
        path => {
            let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading grammar {path}")))?;
            Ok(Grammar::parse(&text)?)
        }
    }
}

/// Samples `n` sequences and splits them 70/10/20. The streams match
/// [`load_data`], so a generated corpus directory and an in-memory run
/// with the same seed see the same data.
pub fn generate_split(grammar: &Grammar, n: usize, seed: u64) -> CliResult<SplitDataset> {
    let rng = RngStream::new(seed, 0);
    let corpus = grammar.generate_corpus(n, &rng.derive("corpus", 0))?;
    Ok(split(&corpus, DEFAULT_RATIOS, &rng.derive("split", 0))?)
}

/// Writes `vocab.txt`, `grammar.txt` and the three split files.
pub fn corpus_gen(grammar: &Grammar, n: usize, seed: u64, out: &Path) -> CliResult<SplitDataset> {
    let data = generate_split(grammar, n, seed)?;
    std::fs::create_dir_all(out).map_err(CliError::io(format!("creating {}", out.display())))?;
    grammar.vocab.write(&out.join("vocab.txt"))?;
    write_atomic(&out.join("grammar.txt"), grammar.to_text().as_bytes())?;
    for (name, part) in [("train", &data.train), ("valid", &data.valid), ("test", &data.test)] {
        write_corpus(&out.join(format!("{name}.txt")), part, &grammar.vocab)?;
    }
    Ok(data)
}

pub fn load_data(cfg: &RunConfig) -> CliResult<Data> {
    match &cfg.corpus {
        Some(dir) => {
            let vocab = Vocab::read(&dir.join("vocab.txt"))?;
            let read = |name: &str| -> CliResult<Vec<LabeledSequence>> {
                Ok(read_corpus(&dir.join(format!("{name}.txt")), &vocab, cfg.seq_len)?.0)
            };
            let split = SplitDataset { train: read("train")?, valid: read("valid")?, test: read("test")? };
            let g = dir.join("grammar.txt");
            let grammar = if g.is_file() { Some(load_grammar(&g.display().to_string(), cfg.seq_len)?) } else { None };
            Ok(Data { vocab, split, grammar })
        }
        None => {
            let grammar = load_grammar(&cfg.grammar, cfg.seq_len)?;
            if grammar.seq_len != cfg.seq_len {
                return Err(CliError::Config(format!(
                    "grammar produces length {} but data.seq_len is {}",
                    grammar.seq_len, cfg.seq_len
                )));
            }
            let split = generate_split(&grammar, cfg.n, cfg.seed())?;
            Ok(Data { vocab: grammar.vocab.clone(), split, grammar: Some(grammar) })
        }
    }
}

pub fn generator_config(cfg: &RunConfig, data: &Data) -> GeneratorConfig {
    GeneratorConfig {
        vocab_size: data.vocab.len(),
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
        cond_dim: cfg.cond_dim,
        seq_len: cfg.seq_len,
        bos: BOS,
        pad: Some(PAD),
    }
}

pub fn discriminator_config(cfg: &RunConfig, data: &Data) -> DiscriminatorConfig {
    DiscriminatorConfig::new(cfg.disc_kind, data.vocab.len(), cfg.seq_len)
}

/// Skip-gram table trained on the training split.
pub fn word_embeddings(cfg: &RunConfig, data: &Data) -> CliResult<Tensor> {
    let sg = SkipGramConfig { dim: cfg.word_dim, epochs: cfg.word_epochs, ..SkipGramConfig::default() };
    Ok(pretrain_embeddings(&data.split.train, data.vocab.len(), sg, &base_rng(cfg).derive("embeddings", 0))?)
}

/// `n` labels cycled through a shuffled copy of `items`' labels.
fn labels_like(items: &[LabeledSequence], n: usize, rng: &RngStream) -> Vec<usize> {
    let mut labels: Vec<usize> = items.iter().map(|s| s.label).collect();
    rng.clone().shuffle(&mut labels);
    labels.iter().cycle().take(n).copied().collect()
}

fn cycled(items: &[LabeledSequence], n: usize, rng: &RngStream) -> Vec<LabeledSequence> {
    let mut v = items.to_vec();
    rng.clone().shuffle(&mut v);
    v.iter().cycle().take(n).cloned().collect()
}

/// Writes the resolved configuration into the run directory, refusing to
/// mix configurations inside one directory unless starting over.
pub fn record_config(cfg: &RunConfig, run: &RunDir) -> CliResult<()> {
    write_atomic(&run.path(CONFIG_FILE), cfg.to_text().as_bytes())
}

fn require_done(path: &Path, cfg: &RunConfig, what: &str) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{} not found; run {what} first", path.display())));
    }
    let ck = Checkpoint::load(path, Some(&cfg.digest()))?;
    if ck.scalar("meta.done")? != 1.0 {
        return Err(CliError::Usage(format!("{} is from an unfinished {what}; resume it first", path.display())));
    }
    Ok(ck)
}

// ---- generator pretraining -------------------------------------------------

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Epochs or iterations completed in total.
    pub completed: usize,
    pub done: bool,
}

fn save_generator(path: &Path, cfg: &RunConfig, gen: &Generator, t: &MleTrainer, done: bool) -> CliResult<()> {
    let mut ck = Checkpoint::new(cfg.digest());
    ck.push_scalar("meta.done", if done { 1.0 } else { 0.0 });
    ck.push_scalar("meta.epoch", t.epoch as f64);
    ck.push_scalar("meta.since_best", t.since_best as f64);
    ck.push_scalar("meta.best_epoch", t.log.best_epoch as f64);
    ck.push_scalar("meta.best_valid_nll", t.log.best_valid_nll);
    ck.push_vec("log.train_nll", &t.log.train_nll);
    ck.push_vec("log.valid_nll", &t.log.valid_nll);
    ck.push_params("gen.", &gen.params);
    ck.push_params("best.", &t.best);
    ck.push_adam("opt.", &gen.params, &t.opt);
    ck.save(path)
}

/// MLE pretraining with early stopping, one checkpoint per epoch. With
/// `resume`, continues from the stored epoch; `max_epochs_now` caps the
/// epochs run by this call.
pub fn pretrain_generator(
    cfg: &RunConfig,
    data: &Data,
    run: &RunDir,
    resume: bool,
    max_epochs_now: Option<usize>,
) -> CliResult<StepOutcome> {
    let path = run.checkpoint(GENERATOR);
    let gcfg = generator_config(cfg, data);
    let (train, valid) = (&data.split.train, &data.split.valid);
    let (mut gen, mut trainer) = if resume && path.is_file() {
        let ck = Checkpoint::load(&path, Some(&cfg.digest()))?;
        let mut gen = Generator::zeros(gcfg)?;
        let mut t = MleTrainer::new(&gen, valid, cfg.g_pretrain)?;
        ck.load_params("gen.", &mut gen.params)?;
        ck.load_params("best.", &mut t.best)?;
        ck.load_adam("opt.", &gen.params, &mut t.opt)?;
        t.epoch = ck.count("meta.epoch")?;
        t.since_best = ck.count("meta.since_best")?;
        t.log.best_epoch = ck.count("meta.best_epoch")?;
        t.log.best_valid_nll = ck.scalar("meta.best_valid_nll")?;
        t.log.train_nll = ck.vec("log.train_nll")?;
        t.log.valid_nll = ck.vec("log.valid_nll")?;
        if ck.scalar("meta.done")? == 1.0 {
            return Ok(StepOutcome { completed: t.epoch, done: true });
        }
        (gen, t)
    } else {
        let gen = Generator::new(gcfg, &base_rng(cfg).derive("generator-init", 0))?;
        let t = MleTrainer::new(&gen, valid, cfg.g_pretrain)?;
        (gen, t)
    };
    let log = CsvLog::open(run.path("pretrain_g.csv"), "epoch,train_nll,valid_nll", trainer.epoch)?;
    let rng = base_rng(cfg).derive("mle", 0);
    let mut ran = 0;
    while !trainer.is_done() && max_epochs_now.map_or(true, |m| ran < m) {
        let (t, v) = trainer.run_epoch(&mut gen, train, valid, &rng)?;
        ran += 1;
        log.append(&format!("{},{t},{v}", trainer.epoch))?;
        save_generator(&path, cfg, &gen, &trainer, false)?;
    }
    if !trainer.is_done() {
        return Ok(StepOutcome { completed: trainer.epoch, done: false });
    }
    let snapshot = trainer.clone();
    let epochs = trainer.epoch;
    trainer.finish(&mut gen);
    save_generator(&path, cfg, &gen, &snapshot, true)?;
    Ok(StepOutcome { completed: epochs, done: true })
}

/// The generator stored in any checkpoint of this crate.
pub fn generator_from(ck: &Checkpoint, cfg: &RunConfig, data: &Data) -> CliResult<Generator> {
    let mut gen = Generator::zeros(generator_config(cfg, data))?;
    ck.load_params("gen.", &mut gen.params)?;
    Ok(gen)
}

// ---- discriminator pretraining ---------------------------------------------

fn save_discriminator(path: &Path, cfg: &RunConfig, d: &Discriminator, opt: &AdamState, epoch: usize, done: bool) -> CliResult<()> {
    let mut ck = Checkpoint::new(cfg.digest());
    ck.push_scalar("meta.done", if done { 1.0 } else { 0.0 });
    ck.push_scalar("meta.epoch", epoch as f64);
    ck.push("embedding", d.embedding().clone());
    ck.push_params("disc.", &d.params);
    ck.push_adam("opt.", &d.params, opt);
    ck.save(path)
}

/// Negatives for discriminator pretraining and its held-out accuracy.
struct DPretrainData {
    real: Vec<LabeledSequence>,
    synthetic: Vec<LabeledSequence>,
    valid_real: Vec<LabeledSequence>,
    valid_synthetic: Vec<LabeledSequence>,
}

fn d_pretrain_data(cfg: &RunConfig, data: &Data, gen: &Generator) -> CliResult<DPretrainData> {
    let r = base_rng(cfg).derive("d-pretrain-data", 0);
    let n = cfg.d_pretrain_samples;
    let labels = labels_like(&data.split.train, n, &r.derive("labels", 0));
    let valid_real = data.split.valid.clone();
    let valid_labels: Vec<usize> = valid_real.iter().map(|s| s.label).collect();
    Ok(DPretrainData {
        real: cycled(&data.split.train, n, &r.derive("real", 0)),
        synthetic: gen.sample_batch(&labels, &r.derive("synthetic", 0))?,
        valid_synthetic: gen.sample_batch(&valid_labels, &r.derive("valid-synthetic", 0))?,
        valid_real,
    })
}

/// Trains the discriminator on real text against samples of the pretrained
/// generator. Row 0 of the log is the untrained loss (ln 2 with the zero
/// head).
pub fn pretrain_discriminator(
    cfg: &RunConfig,
    data: &Data,
    run: &RunDir,
    resume: bool,
    max_epochs_now: Option<usize>,
) -> CliResult<StepOutcome> {
    let gen_ck = require_done(&run.checkpoint(GENERATOR), cfg, "pretrain-g")?;
    let gen = generator_from(&gen_ck, cfg, data)?;
    let path = run.checkpoint(DISCRIMINATOR);
    let dd = d_pretrain_data(cfg, data, &gen)?;
    let (mut d, mut opt, mut epoch) = if resume && path.is_file() {
        let ck = Checkpoint::load(&path, Some(&cfg.digest()))?;
        let emb = ck.get("embedding")?.clone();
        let mut d = Discriminator::new(discriminator_config(cfg, data), emb, &RngStream::new(0, 0))?;
        ck.load_params("disc.", &mut d.params)?;
        let mut opt = AdamState::new(&d.params, AdamConfig::with_lr(cfg.d_pretrain_lr));
        ck.load_adam("opt.", &d.params, &mut opt)?;
        let epoch = ck.count("meta.epoch")?;
        if ck.scalar("meta.done")? == 1.0 {
            return Ok(StepOutcome { completed: epoch, done: true });
        }
        (d, opt, epoch)
    } else {
        let emb = word_embeddings(cfg, data)?;
        let d = Discriminator::new(discriminator_config(cfg, data), emb, &base_rng(cfg).derive("discriminator-init", 0))?;
        let opt = AdamState::new(&d.params, AdamConfig::with_lr(cfg.d_pretrain_lr));
        (d, opt, 0)
    };
    let log = CsvLog::open(run.path("pretrain_d.csv"), "epoch,loss,valid_accuracy", epoch + 1)?;
    if epoch == 0 {
        let (_, loss) = d.loss_and_gradients(&dd.real, &dd.synthetic, None)?;
        log.append(&format!("0,{loss},{}", d.accuracy(&dd.valid_real, &dd.valid_synthetic)?))?;
    }
    let rng = base_rng(cfg).derive("d-pretrain", 0);
    let mut ran = 0;
    while epoch < cfg.d_pretrain_epochs && max_epochs_now.map_or(true, |m| ran < m) {
        let loss = d.fit(&dd.real, &dd.synthetic, 1, cfg.d_pretrain_batch, &mut opt, &rng.derive("epoch", epoch as u64))?;
        epoch += 1;
        ran += 1;
        log.append(&format!("{epoch},{loss},{}", d.accuracy(&dd.valid_real, &dd.valid_synthetic)?))?;
        save_discriminator(&path, cfg, &d, &opt, epoch, false)?;
    }
    let done = epoch >= cfg.d_pretrain_epochs;
    save_discriminator(&path, cfg, &d, &opt, epoch, done)?;
    Ok(StepOutcome { completed: epoch, done })
}

pub fn discriminator_from(ck: &Checkpoint, cfg: &RunConfig, data: &Data) -> CliResult<Discriminator> {
    let mut d = Discriminator::new(discriminator_config(cfg, data), ck.get("embedding")?.clone(), &RngStream::new(0, 0))?;
    ck.load_params("disc.", &mut d.params)?;
    Ok(d)
}

// ---- adversarial training --------------------------------------------------

// Wall time is left out so same-seed checkpoints are byte-identical; it
// lives in timing.csv instead.
const LOG_FIELDS: [&str; 6] = ["nll_test", "mean_reward", "d_loss", "g_objective", "rollout_drift", "theta_step"];

fn save_session(path: &Path, cfg: &RunConfig, s: &AdversarialSession) -> CliResult<()> {
    let mut ck = Checkpoint::new(cfg.digest());
    ck.push_scalar("meta.done", if s.is_finished() { 1.0 } else { 0.0 });
    ck.push_scalar("meta.iteration", s.iteration as f64);
    ck.push_scalar("meta.pg_steps", s.counters.pg_steps as f64);
    ck.push_scalar("meta.tf_steps", s.counters.tf_steps as f64);
    ck.push_scalar("meta.d_steps", s.counters.d_steps as f64);
    let cols: [Vec<f64>; 6] = [
        s.log.iter().map(|m| m.nll_test).collect(),
        s.log.iter().map(|m| m.mean_reward).collect(),
        s.log.iter().map(|m| m.d_loss).collect(),
        s.log.iter().map(|m| m.g_objective).collect(),
        s.log.iter().map(|m| m.rollout_drift).collect(),
        s.log.iter().map(|m| m.theta_step).collect(),
    ];
    for (name, col) in LOG_FIELDS.iter().zip(&cols) {
        ck.push_vec(format!("log.{name}"), col);
    }
    ck.push_params("gen.", &s.generator.params);
    ck.push_params("rollout.", &s.rollout.params);
    ck.push("embedding", s.discriminator.embedding().clone());
    ck.push_params("disc.", &s.discriminator.params);
    ck.push_adam("gopt.", &s.generator.params, &s.g_opt);
    ck.push_adam("dopt.", &s.discriminator.params, &s.d_opt);
    ck.save(path)
}

fn load_session(ck: &Checkpoint, cfg: &RunConfig, data: &Data) -> CliResult<AdversarialSession> {
    let gen = generator_from(ck, cfg, data)?;
    let disc = discriminator_from(ck, cfg, data)?;
    let mut s = AdversarialSession::new(cfg.schedule.clone(), gen, disc, &base_rng(cfg).derive("adversarial", 0))?;
    ck.load_params("rollout.", &mut s.rollout.params)?;
    ck.load_adam("gopt.", &s.generator.params, &mut s.g_opt)?;
    ck.load_adam("dopt.", &s.discriminator.params, &mut s.d_opt)?;
    s.iteration = ck.count("meta.iteration")?;
    s.counters = StepCounters {
        pg_steps: ck.count("meta.pg_steps")? as u64,
        tf_steps: ck.count("meta.tf_steps")? as u64,
        d_steps: ck.count("meta.d_steps")? as u64,
    };
    let cols: Vec<Vec<f64>> = LOG_FIELDS.iter().map(|n| ck.vec(&format!("log.{n}"))).collect::<CliResult<_>>()?;
    if cols.iter().any(|c| c.len() != s.iteration) {
        return Err(CliError::Config("adversarial checkpoint log does not match its iteration count".into()));
    }
    s.log = (0..s.iteration)
        .map(|i| IterationMetrics {
            iteration: i + 1,
            nll_test: cols[0][i],
            mean_reward: cols[1][i],
            d_loss: cols[2][i],
            g_objective: cols[3][i],
            wall_seconds: 0.0,
            rollout_drift: cols[4][i],
            theta_step: cols[5][i],
        })
        .collect();
    Ok(s)
}

/// Runs (or resumes) the adversarial loop, checkpointing and logging one
/// CSV row after every iteration. Wall-clock time goes to `timing.csv` so
/// the metrics file is identical across same-seed runs.
pub fn adversarial(
    cfg: &RunConfig,
    data: &Data,
    run: &RunDir,
    resume: bool,
    max_iterations_now: Option<usize>,
) -> CliResult<(StepOutcome, Vec<IterationMetrics>)> {
    let path = run.checkpoint(ADVERSARIAL);
    let mut session = if resume && path.is_file() {
        load_session(&Checkpoint::load(&path, Some(&cfg.digest()))?, cfg, data)?
    } else {
        let gen = generator_from(&require_done(&run.checkpoint(GENERATOR), cfg, "pretrain-g")?, cfg, data)?;
        let disc = discriminator_from(&require_done(&run.checkpoint(DISCRIMINATOR), cfg, "pretrain-d")?, cfg, data)?;
        AdversarialSession::new(cfg.schedule.clone(), gen, disc, &base_rng(cfg).derive("adversarial", 0))?
    };
    let metrics = CsvLog::open(run.path("adversarial.csv"), METRICS_HEADER, session.iteration)?;
    let timing = CsvLog::open(run.path("timing.csv"), "iteration,wall_seconds", session.iteration)?;
    let adv_data = AdversarialData { train: &data.split.train, test: &data.split.test };
    let mut ran = 0;
    while !session.is_finished() && max_iterations_now.map_or(true, |m| ran < m) {
        let m = session.run_iteration(&adv_data)?;
        ran += 1;
        metrics.append(&m.csv_row())?;
        timing.append(&format!("{},{:.3}", m.iteration, m.wall_seconds))?;
        save_session(&path, cfg, &session)?;
    }
    if session.iteration == 0 {
        save_session(&path, cfg, &session)?;
    }
    let outcome = StepOutcome { completed: session.iteration, done: session.is_finished() };
    Ok((outcome, session.log))
}

// ---- sampling and evaluation -----------------------------------------------

/// Config stored next to a checkpoint (`<run>/config.txt` for
/// `<run>/checkpoints/x.ckpt`).
pub fn config_beside(checkpoint: &Path) -> Option<PathBuf> {
    let run = checkpoint.parent()?.parent()?;
    Some(run.join(CONFIG_FILE)).filter(|p| p.is_file())
}

/// `n` decoded samples, one per line: label, tab, space-separated tokens.
pub fn sample_lines(gen: &Generator, vocab: &Vocab, label: usize, n: usize, seed: u64) -> CliResult<Vec<String>> {
    if label > 1 {
        return Err(CliError::Usage(format!("label must be 0 or 1, got {label}")));
    }
    let rng = RngStream::new(seed, 0).derive("sample-command", 0);
    gen.sample_batch(&vec![label; n], &rng)?
        .iter()
        .map(|s| Ok(format!("{}\t{}", s.label, vocab.decode(&s.tokens)?.join(" "))))
        .collect()
}

fn skipped_or<T>(r: CliResult<T>) -> CliResult<SuiteResult<T>> {
    match r {
        Ok(v) => Ok(SuiteResult::Done(v)),
        Err(CliError::Core(CoreError::InsufficientData(why))) => Ok(SuiteResult::Skipped(why)),
        Err(e) => Err(e),
    }
}

/// Runs the requested suites against `gen`. Suites without enough data are
/// marked skipped instead of failing.
pub fn evaluate(
    cfg: &RunConfig,
    data: &Data,
    gen: &Generator,
    embedding: &Tensor,
    suites: &[Suite],
    seed: u64,
    run_id: &str,
) -> CliResult<MetricsReport> {
    let rng = RngStream::new(seed, 1);
    let (train, test) = (&data.split.train, &data.split.test);
    let mut report = MetricsReport::new(run_id, seed);
    if suites.contains(&Suite::Micro) {
        report.micro = skipped_or((|| {
            let labels = labels_like(test, cfg.eval_samples, &rng.derive("micro-labels", 0));
            let samples: Vec<Vec<usize>> =
                gen.sample_batch(&labels, &rng.derive("micro-samples", 0))?.into_iter().map(|s| s.tokens).collect();
            Ok(MicroMetrics { nll_test: nll_test(gen, test)?, self_bleu: self_bleu(&samples, BLEU_MAX_N)? })
        })())?;
    }
    if suites.contains(&Suite::Macro) {
        report.macro_metrics = skipped_or((|| {
            let labels: Vec<usize> = test.iter().map(|s| s.label).collect();
            let synthetic = gen.sample_batch(&labels, &rng.derive("macro-samples", 0))?;
            Ok(MacroMetrics {
                adver_suc: adversarial_eval(test, &synthetic, embedding, &cfg.eval, &rng.derive("adver-suc", 0))?,
                ere: ere_suite(test, &synthetic, embedding, &cfg.eval, &rng.derive("ere", 0))?,
            })
        })())?;
    }
    if suites.contains(&Suite::Application) {
        report.application = skipped_or((|| {
            let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
            let synthetic = gen.sample_batch(&labels, &rng.derive("application-samples", 0))?;
            Ok(downstream_classification(train, &synthetic, test, embedding, &cfg.eval, &rng.derive("classifier", 0))?)
        })())?;
    }
    report.validate()?;
    Ok(report)
}
