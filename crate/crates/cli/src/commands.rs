use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use condgan_core::evaluation::Suite;

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::{parse_override, RunConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, Data};
use crate::rundir::RunDir;

#[derive(Debug, Parser)]
#[command(name = "condgan", version, about = "Conditional adversarial sequence generation experiments")]
pub struct Cli {
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a labeled corpus from a grammar and write train/valid/test files.
    CorpusGen {
        /// Grammar file, or a preset name (separable, overlapping).
        #[arg(long)]
        grammar: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Sequence length for preset grammars.
        #[arg(long, default_value_t = 20)]
        seq_len: usize,
    },
    /// Pretrain the generator by maximum likelihood.
    PretrainG(TrainArgs),
    /// Pretrain the discriminator against generator samples.
    PretrainD(TrainArgs),
    /// Adversarial training from the pretrained checkpoints.
    Advtrain(TrainArgs),
    /// Print generated sequences, one per line with the label first.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        label: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Defaults to the config.txt of the checkpoint's run directory.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compute evaluation metrics for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["micro", "macro", "application", "all"])]
        suite: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for the report (defaults to the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory; falls back to run.dir, then $CONDGAN_RUN_DIR.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Extra `section.key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue from this step's checkpoint instead of starting over.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many epochs or iterations (the checkpoint allows a
    /// later --resume).
    #[arg(long)]
    pub stop_after: Option<usize>,
}

impl TrainArgs {
    fn config(&self) -> CliResult<RunConfig> {
        let mut overrides = self.overrides.iter().map(|s| parse_override(s)).collect::<CliResult<Vec<_>>>()?;
        if let Some(seed) = self.seed {
            overrides.push(("run.seed".into(), seed.to_string()));
        }
        if let Some(dir) = &self.run_dir {
            overrides.push(("run.dir".into(), dir.display().to_string()));
        }
        let cfg = RunConfig::load(self.config.as_deref(), &overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn config_for_checkpoint(explicit: Option<&Path>, checkpoint: &Path) -> CliResult<RunConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => pipeline::config_beside(checkpoint).ok_or_else(|| {
            CliError::Usage(format!("no config.txt beside {}; pass --config", checkpoint.display()))
        })?,
    };
    let cfg = RunConfig::load(Some(&path), &[])?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_checked(cfg: &RunConfig, path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path, Some(&cfg.digest()))
}

fn training_step(args: &TrainArgs, out: &mut dyn Write, which: &str) -> CliResult<()> {
    let cfg = args.config()?;
    let data = pipeline::load_data(&cfg)?;
    let run = RunDir::open(&cfg.run_dir)?;
    pipeline::record_config(&cfg, &run)?;
    let res = match which {
        "pretrain-g" => pipeline::pretrain_generator(&cfg, &data, &run, args.resume, args.stop_after)?,
        "pretrain-d" => pipeline::pretrain_discriminator(&cfg, &data, &run, args.resume, args.stop_after)?,
        _ => pipeline::adversarial(&cfg, &data, &run, args.resume, args.stop_after)?.0,
    };
    let unit = if which == "advtrain" { "iterations" } else { "epochs" };
    let state = if res.done { "finished" } else { "paused (resume with --resume)" };
    let _ = writeln!(out, "{which}: {} {unit}, {state}; run directory {}", res.completed, cfg.run_dir.display());
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::CorpusGen { grammar, n, seed, out: dir, seq_len } => {
            let g = pipeline::load_grammar(&grammar, seq_len)?;
            let s = pipeline::corpus_gen(&g, n, seed, &dir)?;
            let _ = writeln!(out, "train {}\nvalid {}\ntest {}", s.train.len(), s.valid.len(), s.test.len());
        }
        Command::PretrainG(a) => training_step(&a, out, "pretrain-g")?,
        Command::PretrainD(a) => training_step(&a, out, "pretrain-d")?,
        Command::Advtrain(a) => training_step(&a, out, "advtrain")?,
        Command::Sample { checkpoint, label, n, seed, config } => {
            let cfg = config_for_checkpoint(config.as_deref(), &checkpoint)?;
            let ck = load_checked(&cfg, &checkpoint)?;
            let data = pipeline::load_data(&cfg)?;
            let gen = pipeline::generator_from(&ck, &cfg, &data)?;
            for line in pipeline::sample_lines(&gen, &data.vocab, label, n, seed)? {
                writeln!(out, "{line}").map_err(CliError::io("writing samples"))?;
            }
        }
        Command::Eval { checkpoint, suite, seed, config, out: out_dir, run_id } => {
            let suites = Suite::parse_selection(&suite)?;
            let cfg = config_for_checkpoint(config.as_deref(), &checkpoint)?;
            let ck = load_checked(&cfg, &checkpoint)?;
            let data: Data = pipeline::load_data(&cfg)?;
            let gen = pipeline::generator_from(&ck, &cfg, &data)?;
            let embedding = match ck.has("embedding") {
                true => ck.get("embedding")?.clone(),
                false => pipeline::word_embeddings(&cfg, &data)?,
            };
            let id = run_id.unwrap_or_else(|| {
                checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
            });
            let report = pipeline::evaluate(&cfg, &data, &gen, &embedding, &suites, seed, &id)?;
            let dir = out_dir.unwrap_or_else(|| cfg.run_dir.clone());
            write_atomic(&dir.join(format!("eval_{suite}.csv")), report.to_csv().as_bytes())?;
            write_atomic(&dir.join(format!("eval_{suite}.txt")), report.summary().as_bytes())?;
            let _ = write!(out, "{}", report.summary());
        }
    }
    Ok(())
}
