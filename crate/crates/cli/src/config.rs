//! Run configuration: a flat `section.key = value` text file layered over
//! a preset, with command-line overrides applied last.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use condgan_core::adversarial::{BaselineMode, RescaleMode, RolloutMode, TrainSchedule};
use condgan_core::discriminators::DiscriminatorKind;
use condgan_core::evaluation::EvaluatorConfig;
use condgan_core::generator::MleFitConfig;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default run directory.
pub const RUN_DIR_ENV: &str = "CONDGAN_RUN_DIR";
const DEFAULT_RUN_DIR: &str = "run";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    DeskScale,
    PaperScale,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::DeskScale => "desk-scale",
            Preset::PaperScale => "paper-scale",
        }
    }
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "desk-scale" => Ok(Preset::DeskScale),
            "paper-scale" => Ok(Preset::PaperScale),
            other => Err(CliError::Config(format!("unknown preset `{other}` (desk-scale, paper-scale)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: Option<u64>,
    pub run_dir: PathBuf,

    /// Grammar preset name or grammar file; used when `corpus` is unset.
    pub grammar: String,
    /// Directory written by `corpus-gen`.
    pub corpus: Option<PathBuf>,
    pub n: usize,
    pub seq_len: usize,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub cond_dim: usize,

    /// Skip-gram table shared by every discriminator and evaluator.
    pub word_dim: usize,
    pub word_epochs: usize,

    pub g_pretrain: MleFitConfig,

    pub disc_kind: DiscriminatorKind,
    pub d_pretrain_epochs: usize,
    pub d_pretrain_samples: usize,
    pub d_pretrain_batch: usize,
    pub d_pretrain_lr: f64,

    pub schedule: TrainSchedule,
    /// Rank-rescaling sharpness, used when `adv.rescale = bra`.
    pub bra_delta: f64,

    pub eval: EvaluatorConfig,
    /// Generated sequences used by the evaluation suites.
    pub eval_samples: usize,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = RunConfig {
            preset,
            seed: None,
            run_dir: std::env::var_os(RUN_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_DIR)),
            grammar: "overlapping".into(),
            corpus: None,
            n: 2000,
            seq_len: 20,
            embed_dim: 32,
            hidden_dim: 32,
            cond_dim: 8,
            word_dim: 32,
            word_epochs: 5,
            g_pretrain: MleFitConfig { batch_size: 32, max_epochs: 400, patience: 30, lr: 2e-3 },
            disc_kind: DiscriminatorKind::Cnn,
            d_pretrain_epochs: 3,
            d_pretrain_samples: 1000,
            d_pretrain_batch: 64,
            d_pretrain_lr: 1e-3,
            schedule: TrainSchedule {
                iterations: 30,
                g_steps: 1,
                d_steps: 3,
                d_epochs: 2,
                batch_size: 32,
                d_samples: 256,
                ..TrainSchedule::default()
            },
            bra_delta: 12.0,
            eval: EvaluatorConfig::default(),
            eval_samples: 400,
        };
        match preset {
            Preset::DeskScale => desk,
            Preset::PaperScale => RunConfig {
                n: 10_000,
                seq_len: 40,
                g_pretrain: MleFitConfig { batch_size: 64, max_epochs: 1000, patience: 1000, lr: 1e-3 },
                d_pretrain_epochs: 10,
                d_pretrain_samples: 5000,
                schedule: TrainSchedule { iterations: 100, ..TrainSchedule::default() },
                eval_samples: 2000,
                ..desk
            },
        }
    }

    /// Reads `path` over the preset named by its `run.preset` key (desk-scale
    /// when absent), then applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut pairs = Vec::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(CliError::io(format!("reading config {}", p.display())))?;
            pairs = parse_pairs(&text, &p.display().to_string())?;
        }
        let preset_key = overrides.iter().chain(pairs.iter().map(|(_, kv)| kv)).find(|(k, _)| k == "run.preset");
        let preset = match preset_key {
            Some((_, v)) => v.parse()?,
            None => Preset::DeskScale,
        };
        let mut cfg = RunConfig::preset(preset);
        for (line, (k, v)) in &pairs {
            cfg.set(k, v).map_err(|e| CliError::Config(format!("{}:{line}: {e}", path.unwrap().display())))?;
        }
        for (k, v) in overrides {
            cfg.set(k, v).map_err(|e| CliError::Config(format!("override {k}: {e}")))?;
        }
        Ok(cfg)
    }

    /// Checks the seed is set, referenced paths exist and the schedule is
    /// valid.
    pub fn validate(&self) -> CliResult<()> {
        if self.seed.is_none() {
            return Err(CliError::Config("run.seed is mandatory (set it in the config or with --seed)".into()));
        }
        if let Some(dir) = &self.corpus {
            for f in ["vocab.txt", "train.txt", "valid.txt", "test.txt"] {
                if !dir.join(f).is_file() {
                    return Err(CliError::Config(format!("corpus directory {} lacks {f}", dir.display())));
                }
            }
        } else if !matches!(self.grammar.as_str(), "separable" | "overlapping") && !Path::new(&self.grammar).is_file() {
            return Err(CliError::Config(format!(
                "data.grammar `{}` is neither a preset (separable, overlapping) nor a readable file",
                self.grammar
            )));
        }
        let counts = [
            ("data.n", self.n),
            ("data.seq_len", self.seq_len),
            ("model.embed_dim", self.embed_dim),
            ("model.hidden_dim", self.hidden_dim),
            ("model.cond_dim", self.cond_dim),
            ("embed.dim", self.word_dim),
            ("pretrain_d.samples", self.d_pretrain_samples),
            ("pretrain_d.batch_size", self.d_pretrain_batch),
            ("eval.samples", self.eval_samples),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(CliError::Config(format!("{k} must be >= 1")));
        }
        self.schedule.validate()?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        let s = &mut self.schedule;
        match key {
            "run.preset" => self.preset = v.parse()?,
            "run.seed" => self.seed = Some(num(v)?),
            "run.dir" => self.run_dir = PathBuf::from(v),
            "data.grammar" => self.grammar = v.to_string(),
            "data.corpus" => self.corpus = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.n" => self.n = num(v)?,
            "data.seq_len" => self.seq_len = num(v)?,
            "model.embed_dim" => self.embed_dim = num(v)?,
            "model.hidden_dim" => self.hidden_dim = num(v)?,
            "model.cond_dim" => self.cond_dim = num(v)?,
            "embed.dim" => self.word_dim = num(v)?,
            "embed.epochs" => self.word_epochs = num(v)?,
            "pretrain_g.batch_size" => self.g_pretrain.batch_size = num(v)?,
            "pretrain_g.max_epochs" => self.g_pretrain.max_epochs = num(v)?,
            "pretrain_g.patience" => self.g_pretrain.patience = num(v)?,
            "pretrain_g.lr" => self.g_pretrain.lr = num(v)?,
            "disc.kind" => self.disc_kind = v.parse()?,
            "pretrain_d.epochs" => self.d_pretrain_epochs = num(v)?,
            "pretrain_d.samples" => self.d_pretrain_samples = num(v)?,
            "pretrain_d.batch_size" => self.d_pretrain_batch = num(v)?,
            "pretrain_d.lr" => self.d_pretrain_lr = num(v)?,
            "adv.iterations" => s.iterations = num(v)?,
            "adv.g_steps" => s.g_steps = num(v)?,
            "adv.d_steps" => s.d_steps = num(v)?,
            "adv.d_epochs" => s.d_epochs = num(v)?,
            "adv.rollouts" => {
                s.rollout = if v == "enumerate" { RolloutMode::Enumerate } else { RolloutMode::MonteCarlo { k: num(v)? } }
            }
            "adv.alpha" => s.alpha = num(v)?,
            "adv.rescale" => {
                s.rescale = match v {
                    "none" => RescaleMode::None,
                    "oda" => RescaleMode::Oda,
                    "bra" => RescaleMode::Bra { delta: self.bra_delta },
                    other => return Err(CliError::Config(format!("unknown rescale mode `{other}` (none, oda, bra)"))),
                }
            }
            "adv.bra_delta" => {
                self.bra_delta = num(v)?;
                if let RescaleMode::Bra { delta } = &mut s.rescale {
                    *delta = self.bra_delta;
                }
            }
            "adv.baseline" => {
                s.baseline = match v {
                    "off" => BaselineMode::Off,
                    "mean" => BaselineMode::BatchMean,
                    other => return Err(CliError::Config(format!("unknown baseline `{other}` (off, mean)"))),
                }
            }
            "adv.teacher_forcing" => s.teacher_forcing = num(v)?,
            "adv.batch_size" => s.batch_size = num(v)?,
            "adv.d_samples" => s.d_samples = num(v)?,
            "adv.d_batch_size" => s.d_batch_size = num(v)?,
            "adv.g_lr" => s.g_lr = num(v)?,
            "adv.d_lr" => s.d_lr = num(v)?,
            "eval.epochs" => self.eval.epochs = num(v)?,
            "eval.batch_size" => self.eval.batch_size = num(v)?,
            "eval.lr" => self.eval.lr = num(v)?,
            "eval.seeds" => self.eval.seeds = num(v)?,
            "eval.train_fraction" => self.eval.train_fraction = num(v)?,
            "eval.kind" => self.eval.kind = v.parse()?,
            "eval.samples" => self.eval_samples = num(v)?,
            other => return Err(CliError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Every key in a fixed order, formatted so that parsing it back gives
    /// the same configuration.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.schedule;
        let rescale = match s.rescale {
            RescaleMode::None => "none",
            RescaleMode::Oda => "oda",
            RescaleMode::Bra { .. } => "bra",
        };
        let rollouts = match s.rollout {
            RolloutMode::MonteCarlo { k } => k.to_string(),
            RolloutMode::Enumerate => "enumerate".into(),
        };
        vec![
            ("run.preset", self.preset.name().into()),
            ("run.seed", self.seed.map(|s| s.to_string()).unwrap_or_default()),
            ("run.dir", self.run_dir.display().to_string()),
            ("data.grammar", self.grammar.clone()),
            ("data.corpus", self.corpus.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("data.n", self.n.to_string()),
            ("data.seq_len", self.seq_len.to_string()),
            ("model.embed_dim", self.embed_dim.to_string()),
            ("model.hidden_dim", self.hidden_dim.to_string()),
            ("model.cond_dim", self.cond_dim.to_string()),
            ("embed.dim", self.word_dim.to_string()),
            ("embed.epochs", self.word_epochs.to_string()),
            ("pretrain_g.batch_size", self.g_pretrain.batch_size.to_string()),
            ("pretrain_g.max_epochs", self.g_pretrain.max_epochs.to_string()),
            ("pretrain_g.patience", self.g_pretrain.patience.to_string()),
            ("pretrain_g.lr", self.g_pretrain.lr.to_string()),
            ("disc.kind", self.disc_kind.name().into()),
            ("pretrain_d.epochs", self.d_pretrain_epochs.to_string()),
            ("pretrain_d.samples", self.d_pretrain_samples.to_string()),
            ("pretrain_d.batch_size", self.d_pretrain_batch.to_string()),
            ("pretrain_d.lr", self.d_pretrain_lr.to_string()),
            ("adv.iterations", s.iterations.to_string()),
            ("adv.g_steps", s.g_steps.to_string()),
            ("adv.d_steps", s.d_steps.to_string()),
            ("adv.d_epochs", s.d_epochs.to_string()),
            ("adv.rollouts", rollouts),
            ("adv.alpha", s.alpha.to_string()),
            ("adv.rescale", rescale.into()),
            ("adv.bra_delta", self.bra_delta.to_string()),
            ("adv.baseline", if s.baseline == BaselineMode::Off { "off" } else { "mean" }.into()),
            ("adv.teacher_forcing", s.teacher_forcing.to_string()),
            ("adv.batch_size", s.batch_size.to_string()),
            ("adv.d_samples", s.d_samples.to_string()),
            ("adv.d_batch_size", s.d_batch_size.to_string()),
            ("adv.g_lr", s.g_lr.to_string()),
            ("adv.d_lr", s.d_lr.to_string()),
            ("eval.kind", self.eval.kind.name().into()),
            ("eval.epochs", self.eval.epochs.to_string()),
            ("eval.batch_size", self.eval.batch_size.to_string()),
            ("eval.lr", self.eval.lr.to_string()),
            ("eval.seeds", self.eval.seeds.to_string()),
            ("eval.train_fraction", self.eval.train_fraction.to_string()),
            ("eval.samples", self.eval_samples.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 over every key except `run.dir`, which only says where
    /// outputs go.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "run.dir" {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        h.finalize().into()
    }
}

fn num<T: FromStr>(v: &str) -> CliResult<T> {
    v.parse().map_err(|_| CliError::Config(format!("cannot parse `{v}`")))
}

/// `key = value` lines with `#` comments; returns `(line, (key, value))`.
pub fn parse_pairs(text: &str, origin: &str) -> CliResult<Vec<(usize, (String, String))>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `section.key = value`", i + 1)))?;
        out.push((i + 1, (k.trim().to_string(), v.trim().to_string())));
    }
    Ok(out)
}

/// Parses `key=value` override flags.
pub fn parse_override(s: &str) -> CliResult<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| CliError::Usage(format!("override `{s}` is not of the form key=value")))
}
