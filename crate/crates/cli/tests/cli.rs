use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn condgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condgan"))
        .args(args)
        .env_remove("CONDGAN_RUN_DIR")
        .output()
        .expect("spawn condgan")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
run.preset = desk-scale
data.grammar = separable
data.n = 200
data.seq_len = 8
model.embed_dim = 8
model.hidden_dim = 8
model.cond_dim = 4
embed.dim = 8
embed.epochs = 1
pretrain_g.max_epochs = 3
pretrain_d.epochs = 1
pretrain_d.samples = 64
adv.iterations = 2
adv.d_steps = 1
adv.d_epochs = 1
adv.rollouts = 2
adv.batch_size = 8
adv.d_samples = 16
eval.epochs = 2
eval.seeds = 1
eval.samples = 20
";

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.txt");
    std::fs::write(&p, TINY).unwrap();
    p
}

/// Runs the three training steps; returns the run directory.
fn train(root: &Path, name: &str, seed: &str, threads: &str) -> PathBuf {
    let cfg = write_config(root);
    let run = root.join(name);
    for step in ["pretrain-g", "pretrain-d", "advtrain"] {
        let o = condgan(&[
            "--threads",
            threads,
            step,
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--run-dir",
            run.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{step}: {}", stderr(&o));
    }
    run
}

fn ckpt(run: &Path, name: &str) -> String {
    run.join("checkpoints").join(format!("{name}.ckpt")).display().to_string()
}

#[test]
fn corpus_gen_splits_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = condgan(&["corpus-gen", "--grammar", "separable", "--n", "2000", "--seed", "3", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(String::from_utf8_lossy(&o.stdout), "train 1400\nvalid 200\ntest 400\n");
    }
    for f in ["train.txt", "valid.txt", "test.txt", "vocab.txt", "grammar.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_grammar_exits_2_citing_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("bad.txt");
    std::fs::write(&g, "name: bad\nseq_len: 2\n\ntemplate\nlabel: 0\nweight: 1\nslot: a=0.5 b=0.4\nslot: c\nend\n").unwrap();
    let o = condgan(&["corpus-gen", "--grammar", g.to_str().unwrap(), "--n", "10", "--seed", "1", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
}

#[test]
fn unknown_suite_prints_usage() {
    let o = condgan(&["eval", "--checkpoint", "x.ckpt", "--suite", "nano", "--seed", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).to_lowercase().contains("usage"), "{}", stderr(&o));
}

#[test]
fn missing_seed_and_missing_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = dir.path().join("r");
    let o = condgan(&["pretrain-g", "--config", cfg.to_str().unwrap(), "--run-dir", run.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = condgan(&["pretrain-d", "--config", cfg.to_str().unwrap(), "--seed", "1", "--run-dir", run.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn end_to_end_outputs_and_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "run", "11", "1");
    let adv = ckpt(&run, "adversarial");

    let csv = std::fs::read_to_string(run.join("adversarial.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let s1 = condgan(&["sample", "--checkpoint", &adv, "--label", "1", "--n", "5", "--seed", "4"]);
    let s2 = condgan(&["sample", "--checkpoint", &adv, "--label", "1", "--n", "5", "--seed", "4"]);
    assert_eq!(code(&s1), 0, "{}", stderr(&s1));
    assert_eq!(s1.stdout, s2.stdout);
    let text = String::from_utf8(s1.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    for l in text.lines() {
        let (label, toks) = l.split_once('\t').unwrap();
        assert_eq!(label, "1");
        assert_eq!(toks.split(' ').count(), 8);
    }

    let empty = condgan(&["sample", "--checkpoint", &adv, "--label", "0", "--n", "0", "--seed", "4"]);
    assert_eq!(code(&empty), 0);
    assert!(empty.stdout.is_empty());

    let out = dir.path().join("eval");
    std::fs::create_dir_all(&out).unwrap();
    let e = condgan(&["eval", "--checkpoint", &adv, "--suite", "micro", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let report = std::fs::read_to_string(out.join("eval_micro.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), "run_id,seed,nll_test,self_bleu");
    assert!(out.join("eval_micro.txt").exists());

    // A flipped byte fails the checksum.
    let bad = dir.path().join("bad.ckpt");
    let mut bytes = std::fs::read(&adv).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&bad, bytes).unwrap();
    let cfg = run.join("config.txt");
    let c = condgan(&["sample", "--checkpoint", bad.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--label", "0", "--n", "1", "--seed", "1"]);
    assert_eq!(code(&c), 4, "{}", stderr(&c));

    // Resuming under a changed config is refused.
    let r = condgan(&[
        "advtrain",
        "--config",
        write_config(dir.path()).to_str().unwrap(),
        "--seed",
        "11",
        "--run-dir",
        run.to_str().unwrap(),
        "--set",
        "adv.g_lr=0.5",
        "--resume",
    ]);
    assert_eq!(code(&r), 2, "{}", stderr(&r));
    assert!(stderr(&r).contains("digest"), "{}", stderr(&r));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let one = train(dir.path(), "one", "21", "1");
    let four = train(dir.path(), "four", "21", "4");
    for f in ["pretrain_g.csv", "pretrain_d.csv", "adversarial.csv", "config.txt"] {
        let a = std::fs::read_to_string(one.join(f)).unwrap();
        let b = std::fs::read_to_string(four.join(f)).unwrap();
        if f == "config.txt" {
            // Only run.dir differs.
            let strip = |s: &str| s.lines().filter(|l| !l.starts_with("run.dir")).collect::<Vec<_>>().join("\n");
            assert_eq!(strip(&a), strip(&b));
        } else {
            assert_eq!(a, b, "{f}");
        }
    }
    for ck in ["generator", "discriminator", "adversarial"] {
        assert_eq!(std::fs::read(ckpt(&one, ck)).unwrap(), std::fs::read(ckpt(&four, ck)).unwrap(), "{ck}");
    }
}
