use super::*;
use crate::numerics::{finite_diff_check, AdamConfig, GradCheckConfig};

fn tiny(vocab: usize, seq_len: usize) -> GeneratorConfig {
    GeneratorConfig {
        vocab_size: vocab,
        embed_dim: 3,
        hidden_dim: 3,
        cond_dim: 2,
        seq_len,
        bos: 0,
        pad: None,
    }
}

fn random_gen(cfg: GeneratorConfig, seed: u64, scale: f64) -> Generator {
    let mut g = Generator::new(cfg, &RngStream::new(seed, 0)).unwrap();
    let mut r = RngStream::new(seed, 99);
    for (_, p) in g.params.iter_mut() {
        p.value.as_mut_slice().iter_mut().for_each(|v| *v = r.normal() * scale);
    }
    g
}

/// Textbook LSTM cell written independently of the production layout.
fn reference_step(g: &Generator, h: &[f64], c: &[f64], x: usize, y: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = |n: &str| g.params.get(n).unwrap().value.clone();
    let (emb, cond, w, b, wo, bo) = (
        p("gen.token_embedding"),
        p("gen.cond_embedding"),
        p("gen.lstm.weight"),
        p("gen.lstm.bias"),
        p("gen.out.weight"),
        p("gen.out.bias"),
    );
    let mut z = h.to_vec();
    z.extend_from_slice(emb.row(x));
    z.extend_from_slice(cond.row(y));
    let hd = h.len();
    let pre = |gate: usize, k: usize| -> f64 {
        let col = gate * hd + k;
        b.get(0, col) + (0..z.len()).map(|r| z[r] * w.get(r, col)).sum::<f64>()
    };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut hn = vec![0.0; hd];
    let mut cn = vec![0.0; hd];
    for k in 0..hd {
        let (i, f, o, gg) = (sig(pre(0, k)), sig(pre(1, k)), sig(pre(2, k)), pre(3, k).tanh());
        cn[k] = f * c[k] + i * gg;
        hn[k] = o * cn[k].tanh();
    }
    let logits: Vec<f64> = (0..wo.cols())
        .map(|v| bo.get(0, v) + (0..hd).map(|k| hn[k] * wo.get(k, v)).sum::<f64>())
        .collect();
    (hn, cn, logits)
}

#[test]
fn lstm_step_matches_reference_cell() {
    let g = random_gen(tiny(5, 4), 1, 0.7);
    let mut state = LstmState::zeros(2, 3);
    state.h = Tensor::from_rows(&[[0.1, -0.2, 0.3], [0.5, 0.0, -0.4]]);
    state.c = Tensor::from_rows(&[[-0.3, 0.2, 0.9], [0.0, 0.1, -0.1]]);
    let (next, logits) = g.lstm_step(&state, &[2, 4], &[0, 1]).unwrap();
    for (row, (x, y)) in [(2usize, 0usize), (4, 1)].into_iter().enumerate() {
        let (h, c, l) = reference_step(&g, state.h.row(row), state.c.row(row), x, y);
        for k in 0..3 {
            assert!((next.h.get(row, k) - h[k]).abs() < 1e-12);
            assert!((next.c.get(row, k) - c[k]).abs() < 1e-12);
        }
        for v in 0..5 {
            assert!((logits.get(row, v) - l[v]).abs() < 1e-12);
        }
    }
}

#[test]
fn prepared_step_matches_batched_step() {
    let g = random_gen(tiny(6, 4), 2, 0.5);
    let prepared = g.prepare();
    let mut s = prepared.initial_state();
    let mut probs = vec![0.0; 6];
    let mut batched = LstmState::zeros(1, 3);
    for &tok in &[0usize, 3, 5, 2] {
        prepared.step(&mut s, tok, 1, &mut probs);
        let (next, logits) = g.lstm_step(&batched, &[tok], &[1]).unwrap();
        batched = next;
        let mut expect = logits.row(0).to_vec();
        crate::numerics::softmax_in_place(&mut expect);
        for v in 0..6 {
            assert!((probs[v] - expect[v]).abs() < 1e-12);
        }
        for k in 0..3 {
            assert!((s.h[k] - batched.h.get(0, k)).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_weights_give_zero_state_and_uniform_output() {
    let g = Generator::zeros(tiny(4, 3)).unwrap();
    let (next, logits) = g.lstm_step(&LstmState::zeros(1, 3), &[1], &[0]).unwrap();
    assert!(next.h.as_slice().iter().all(|&v| v == 0.0));
    assert!(logits.as_slice().iter().all(|&v| v == 0.0));
    let lp = g.sequence_log_prob(&LabeledSequence { label: 1, tokens: vec![1, 2, 3] }).unwrap();
    assert!((lp - 3.0 * (0.25f64).ln()).abs() < 1e-12);
}

fn all_sequences(vocab: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| (0..vocab).map(move |v| [p.clone(), vec![v]].concat()))
            .collect();
    }
    out
}

#[test]
fn sequence_probabilities_sum_to_one() {
    let g = random_gen(tiny(3, 3), 3, 1.0);
    for label in 0..2 {
        let total: f64 = all_sequences(3, 3)
            .into_iter()
            .map(|tokens| g.sequence_log_prob(&LabeledSequence { label, tokens }).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-10, "label {label}: {total}");
    }
}

#[test]
fn sampling_frequencies_match_model_probabilities() {
    // 9 outcomes, df = 8, p = 0.001 critical value.
    const CHI2_CRIT_DF8: f64 = 26.12448155837614;
    let g = random_gen(tiny(3, 2), 4, 1.0);
    let n = 20_000;
    let samples = g.sample_batch(&vec![1; n], &RngStream::new(11, 0)).unwrap();
    let mut counts = [0usize; 9];
    for s in &samples {
        counts[s.tokens[0] * 3 + s.tokens[1]] += 1;
    }
    let chi2: f64 = all_sequences(3, 2)
        .into_iter()
        .map(|tokens| {
            let idx = tokens[0] * 3 + tokens[1];
            let p = g.sequence_log_prob(&LabeledSequence { label: 1, tokens }).unwrap().exp();
            let e = p * n as f64;
            (counts[idx] as f64 - e).powi(2) / e
        })
        .sum();
    assert!(chi2 < CHI2_CRIT_DF8, "chi2 = {chi2}");
}

#[test]
fn bptt_matches_finite_differences() {
    let mut cfg = tiny(5, 4);
    cfg.pad = Some(1);
    let g = random_gen(cfg, 5, 0.6);
    let batch = vec![
        LabeledSequence { label: 0, tokens: vec![2, 3, 1, 4] },
        LabeledSequence { label: 1, tokens: vec![4, 4, 2, 0] },
    ];
    let weights = Tensor::from_rows(&[[0.5, -1.0, 2.0, 0.3], [1.5, 0.0, -0.7, 1.0]]);
    let (analytic, _) = g.weighted_gradients(&batch, &weights).unwrap();
    let mut store = g.params.clone();
    store.zero_grad();
    store.accumulate(&analytic, 1.0).unwrap();
    let report = finite_diff_check(
        |p| {
            let probe = Generator::from_params(cfg, p.clone())?;
            let (_, obj) = probe.weighted_gradients(&batch, &weights)?;
            Ok(-obj)
        },
        &mut store,
        GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn pad_targets_carry_no_likelihood_or_gradient() {
    let cfg = GeneratorConfig { pad: Some(1), ..tiny(5, 3) };
    let g = random_gen(cfg, 6, 0.5);
    let seq = LabeledSequence { label: 0, tokens: vec![3, 1, 1] };
    let lp = g.step_log_probs(&seq).unwrap();
    assert_eq!(&lp[1..], &[0.0, 0.0]);
    let (full, _) = g.mle_gradients(&[seq.clone()]).unwrap();
    let w = Tensor::from_rows(&[[1.0, 0.0, 0.0]]);
    let (first, _) = g.weighted_gradients(&[seq], &w).unwrap();
    assert_eq!(full.flatten(), first.flatten());
}

#[test]
fn memorizes_a_handful_of_sequences() {
    let cfg = GeneratorConfig::new(8, 6);
    let mut g = Generator::new(cfg, &RngStream::new(7, 0)).unwrap();
    let data = vec![
        LabeledSequence { label: 0, tokens: vec![2, 3, 4, 5, 6, 7] },
        LabeledSequence { label: 1, tokens: vec![7, 6, 5, 4, 3, 2] },
    ];
    let mut opt = AdamState::new(&g.params, AdamConfig::with_lr(1e-2));
    for _ in 0..400 {
        g.mle_step(&data, &mut opt).unwrap();
    }
    let nll = g.mean_nll(&data).unwrap();
    assert!(nll < 0.01, "nll = {nll}");
}

#[test]
fn unit_rewards_reproduce_the_mle_gradient() {
    let g = random_gen(GeneratorConfig::new(10, 5), 8, 0.3);
    let mut rng = RngStream::new(8, 1);
    let batch: Vec<_> = (0..6).map(|i| g.sample(i % 2, &mut rng).unwrap()).collect();
    let (mle, _) = g.mle_gradients(&batch).unwrap();
    let (pg, _) = g.weighted_gradients(&batch, &Tensor::filled(6, 5, 1.0)).unwrap();
    let (a, b) = (mle.flatten(), pg.flatten());
    let cos = crate::numerics::dot(&a, &b) / (crate::numerics::dot(&a, &a) * crate::numerics::dot(&b, &b)).sqrt();
    assert!(cos > 0.999, "cos = {cos}");
}

#[test]
fn zero_rewards_leave_parameters_unchanged() {
    let mut g = random_gen(GeneratorConfig::new(10, 5), 9, 0.3);
    let before = g.params.clone();
    let mut rng = RngStream::new(9, 1);
    let batch: Vec<_> = (0..4).map(|i| g.sample(i % 2, &mut rng).unwrap()).collect();
    let mut opt = AdamState::new(&g.params, AdamConfig::with_lr(1e-4));
    g.policy_gradient_step(&batch, &Tensor::zeros(4, 5), &mut opt).unwrap();
    assert_eq!(g.params.max_abs_diff(&before).unwrap(), 0.0);
}

#[test]
fn non_finite_rewards_are_rejected() {
    let mut g = random_gen(GeneratorConfig::new(6, 2), 10, 0.3);
    let batch = vec![LabeledSequence { label: 0, tokens: vec![2, 3] }];
    let mut opt = AdamState::new(&g.params, AdamConfig::default());
    let mut r = Tensor::zeros(1, 2);
    r.set(0, 1, f64::NAN);
    let err = g.policy_gradient_step(&batch, &r, &mut opt).unwrap_err();
    assert!(err.to_string().contains("policy_gradient_step"), "{err}");
}

#[test]
fn policy_gradient_solves_a_bandit() {
    let cfg = GeneratorConfig { pad: None, ..GeneratorConfig::new(3, 1) };
    let mut g = Generator::new(cfg, &RngStream::new(12, 0)).unwrap();
    let mut opt = AdamState::new(&g.params, AdamConfig::with_lr(1e-2));
    for it in 0..300 {
        let batch = g.sample_batch(&[0; 32], &RngStream::new(12, it + 1)).unwrap();
        let mut r = Tensor::zeros(32, 1);
        let mean = batch.iter().filter(|s| s.tokens[0] == 2).count() as f64 / 32.0;
        for (i, s) in batch.iter().enumerate() {
            r.set(i, 0, (s.tokens[0] == 2) as u8 as f64 - mean);
        }
        g.policy_gradient_step(&batch, &r, &mut opt).unwrap();
    }
    let p = g.prepare().next_probs(&[], 0)[2];
    assert!(p > 0.9, "p(best arm) = {p}");
}

#[test]
fn rollout_states_continue_the_prefix() {
    let g = random_gen(GeneratorConfig::new(7, 5), 13, 0.4);
    let prepared = g.prepare();
    let seq = LabeledSequence { label: 1, tokens: vec![2, 3, 4, 5, 6] };
    let states = prepared.states_along(&seq);
    let mut probs = vec![0.0; 7];
    for t in 1..5 {
        let mut s = states[t - 1].clone();
        prepared.step(&mut s, seq.tokens[t - 1], 1, &mut probs);
        let expect = prepared.next_probs(&seq.tokens[..t], 1);
        assert_eq!(probs, expect);
        let done = prepared.complete(&seq, t, &states[t - 1], &mut RngStream::new(1, t as u64));
        assert_eq!(&done[..t], &seq.tokens[..t]);
        assert_eq!(done.len(), 5);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let g = random_gen(GeneratorConfig::new(12, 8), 14, 0.4);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let s = g.sample_batch(&[0, 1, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1], &RngStream::new(3, 0)).unwrap();
            let (grad, nll) = g.mle_gradients(&s).unwrap();
            (s, grad.flatten(), nll)
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn fit_mle_improves_validation_nll_and_keeps_best() {
    let grammar = crate::corpus::Grammar::preset("overlapping", 10).unwrap();
    let corpus = grammar.generate_corpus(300, &RngStream::new(15, 0)).unwrap();
    let (train, valid) = corpus.split_at(240);
    let cfg = GeneratorConfig::new(grammar.vocab.len(), 10);
    let mut g = Generator::new(cfg, &RngStream::new(15, 1)).unwrap();
    let start = g.mean_nll(valid).unwrap();
    let fit = MleFitConfig { max_epochs: 15, patience: 3, ..Default::default() };
    let log = fit_mle(&mut g, train, valid, fit, &RngStream::new(15, 2)).unwrap();
    let end = g.mean_nll(valid).unwrap();
    assert!(end < start - 1.0, "{start} -> {end}");
    assert!((end - log.best_valid_nll).abs() < 1e-12);
}

#[test]
fn rejects_bad_inputs() {
    let g = Generator::zeros(tiny(4, 3)).unwrap();
    assert!(matches!(
        g.sequence_log_prob(&LabeledSequence { label: 0, tokens: vec![1, 9, 2] }),
        Err(Error::TokenOutOfRange { id: 9, .. })
    ));
    assert!(matches!(g.sample(2, &mut RngStream::new(0, 0)), Err(Error::LabelOutOfRange(2))));
    assert!(g.sequence_log_prob(&LabeledSequence { label: 0, tokens: vec![1] }).is_err());
}
