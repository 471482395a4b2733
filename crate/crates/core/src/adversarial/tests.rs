use proptest::prelude::*;

use super::*;
use crate::discriminators::{Discriminator, DiscriminatorConfig, DiscriminatorKind};
use crate::generator::GeneratorConfig;
use crate::numerics::AdamState;

fn tiny_gen(vocab: usize, seq_len: usize, seed: u64) -> Generator {
    let cfg = GeneratorConfig { embed_dim: 4, hidden_dim: 4, cond_dim: 2, pad: None, ..GeneratorConfig::new(vocab, seq_len) };
    let mut g = Generator::new(cfg, &RngStream::new(seed, 0)).unwrap();
    let mut r = RngStream::new(seed, 5);
    for (_, p) in g.params.iter_mut() {
        p.value.as_mut_slice().iter_mut().for_each(|v| *v = 0.8 * r.normal());
    }
    g
}

fn seq(label: usize, tokens: &[usize]) -> LabeledSequence {
    LabeledSequence { label, tokens: tokens.to_vec() }
}

/// A non-trivial scorer over binary sequences.
fn probe_score(tokens: &[usize], label: usize) -> f64 {
    let ones = tokens.iter().filter(|&&t| t == 1).count() as f64;
    let last = *tokens.last().unwrap() as f64;
    (0.1 + 0.15 * ones + 0.2 * last + 0.05 * label as f64).min(0.95)
}

#[test]
fn rollout_of_a_complete_sequence_is_the_sequence() {
    let g = tiny_gen(4, 3, 1);
    let s = seq(0, &[1, 2, 3]);
    let out = mc_rollout(&s, 3, 5, &g, &mut RngStream::new(1, 1)).unwrap();
    assert_eq!(out, vec![vec![1, 2, 3]; 5]);
}

#[test]
fn saturated_rollout_policy_gives_identical_completions() {
    let mut g = tiny_gen(4, 5, 2);
    let id = g.params.id("gen.out.bias").unwrap();
    g.params.value_mut(id).set(0, 3, 1e3);
    let out = mc_rollout(&seq(1, &[2, 2, 0, 0, 0]), 2, 8, &g, &mut RngStream::new(2, 1)).unwrap();
    for c in &out {
        assert_eq!(c, &vec![2, 2, 3, 3, 3]);
    }
}

#[test]
fn rollout_completions_follow_the_rollout_policy() {
    // Two free positions over V=2: 4 outcomes, df = 3, p = 0.001.
    const CHI2_CRIT_DF3: f64 = 16.266;
    let g = tiny_gen(2, 3, 3);
    let prefix = seq(1, &[1, 0, 0]);
    let k = 10_000;
    let out = mc_rollout(&prefix, 1, k, &g, &mut RngStream::new(3, 1)).unwrap();
    let mut counts = [0usize; 4];
    for c in &out {
        assert_eq!(c[0], 1);
        counts[c[1] * 2 + c[2]] += 1;
    }
    let prepared = g.prepare();
    let mut chi2 = 0.0;
    for a in 0..2 {
        let p1 = prepared.next_probs(&[1], 1)[a];
        for b in 0..2 {
            let p2 = prepared.next_probs(&[1, a], 1)[b];
            let e = p1 * p2 * k as f64;
            chi2 += (counts[a * 2 + b] as f64 - e).powi(2) / e;
        }
    }
    assert!(chi2 < CHI2_CRIT_DF3, "chi2 = {chi2}");
}

#[test]
fn constant_discriminator_gives_constant_rewards() {
    let g = tiny_gen(5, 4, 4);
    let batch = vec![seq(0, &[1, 2, 3, 4]), seq(1, &[4, 4, 0, 1])];
    let scorer = |_: &[usize], _: usize| 0.37;
    for mode in [RolloutMode::MonteCarlo { k: 3 }, RolloutMode::Enumerate] {
        let table = compute_rewards(&batch, &scorer, &g, mode, &RngStream::new(4, 0)).unwrap();
        assert!(table.values.as_slice().iter().all(|&r| (r - 0.37).abs() < 1e-15));
    }
}

#[test]
fn enumeration_matches_closed_form() {
    let g = tiny_gen(2, 2, 5);
    let prepared = g.prepare();
    for (label, x1) in [(0usize, 0usize), (1, 1), (0, 1)] {
        let s = seq(label, &[x1, 0]);
        let table = compute_rewards(&[s.clone()], &probe_score, &g, RolloutMode::Enumerate, &RngStream::new(0, 0)).unwrap();
        let probs = prepared.next_probs(&[x1], label);
        let expect: f64 = (0..2).map(|x2| probs[x2] * probe_score(&[x1, x2], label)).sum();
        assert!((table.values.get(0, 0) - expect).abs() < 1e-12);
        assert_eq!(table.values.get(0, 1), probe_score(&s.tokens, label));
    }
}

#[test]
fn monte_carlo_agrees_with_enumeration_within_three_sigma() {
    let g = tiny_gen(2, 3, 6);
    let s = seq(1, &[0, 1, 1]);
    let exact = compute_rewards(&[s.clone()], &probe_score, &g, RolloutMode::Enumerate, &RngStream::new(0, 0)).unwrap();
    let k = 20_000;
    let mc = compute_rewards(&[s], &probe_score, &g, RolloutMode::MonteCarlo { k }, &RngStream::new(6, 1)).unwrap();
    // Scores lie in [0.1, 0.95], so the per-sample std is at most 0.425.
    let se = 0.425 / (k as f64).sqrt();
    for t in 0..3 {
        let d = (mc.values.get(0, t) - exact.values.get(0, t)).abs();
        assert!(d < 3.0 * se, "t={t}: |{d}| >= 3·{se}");
    }
}

#[test]
fn doubling_rollouts_reduces_reward_variance() {
    let g = tiny_gen(2, 4, 7);
    let s = seq(0, &[1, 0, 1, 0]);
    let variance = |k: usize| {
        let xs: Vec<f64> = (0..100)
            .map(|trial| {
                compute_rewards(&[s.clone()], &probe_score, &g, RolloutMode::MonteCarlo { k }, &RngStream::new(7, trial))
                    .unwrap()
                    .values
                    .get(0, 0)
            })
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let ratio = variance(16) / variance(8);
    assert!(ratio < 0.75, "variance ratio {ratio}");
}

#[test]
fn reward_streams_do_not_depend_on_thread_count() {
    let g = tiny_gen(5, 6, 8);
    let batch: Vec<_> = (0..9).map(|i| seq(i % 2, &[1, 2, 3, 4, 0, i % 5])).collect();
    let scorer = |t: &[usize], y: usize| (t.iter().sum::<usize>() as f64 * 0.01 + y as f64 * 0.1).min(1.0);
    let run = |n| {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(|| {
            compute_rewards(&batch, &scorer, &g, RolloutMode::MonteCarlo { k: 4 }, &RngStream::new(8, 0)).unwrap()
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn enumeration_refuses_large_spaces() {
    let g = tiny_gen(60, 8, 9);
    let scorer = |_: &[usize], _: usize| 0.5;
    assert!(compute_rewards(&[seq(0, &[1; 8])], &scorer, &g, RolloutMode::Enumerate, &RngStream::new(0, 0)).is_err());
}

#[test]
fn oda_probe_values() {
    assert_eq!(rescale_oda(0.5), 1.0);
    assert_eq!(rescale_oda(0.8), 4.0);
    assert_eq!(rescale_oda(0.0), 0.0);
    let clamped = rescale_oda(0.999_999_999);
    assert!((clamped - 1e6).abs() / 1e6 < 1e-5, "{clamped}");
    assert!(clamped <= 1e6);
}

#[test]
fn bra_probe_values() {
    let rewards: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
    let out = rescale_bra(&rewards, 12.0).unwrap();
    // Highest raw reward (index 63) has rank 1.
    assert!((out[63] - 0.9970189672701452).abs() < 1e-15);
    // Rank 32 = B/2 sits at index 32.
    assert_eq!(out[32], 0.5);
    assert!(rescale_bra(&[0.3], 12.0).is_err());
    assert!(rescale_bra(&[0.3, 0.4], 0.0).is_err());
}

#[test]
fn bra_breaks_ties_by_input_order() {
    let out = rescale_bra(&[0.5, 0.5, 0.5, 0.5], 4.0).unwrap();
    assert!(out.windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn baseline_probe_values() {
    let values = Tensor::from_rows(&[[0.2, 0.9], [0.2, 0.1], [0.2, 0.5]]);
    let out = subtract_baseline(&RewardTable::raw(values.clone()), BaselineMode::BatchMean);
    for i in 0..3 {
        assert_eq!(out.values.get(i, 0), 0.0);
    }
    assert_eq!(out.baseline.as_ref().unwrap().len(), 2);
    assert_eq!(subtract_baseline(&RewardTable::raw(values.clone()), BaselineMode::Off).values, values);
}

#[test]
fn soft_update_probe_values() {
    let g = tiny_gen(4, 3, 10);
    let h = tiny_gen(4, 3, 11);
    assert_eq!(soft_update(&g.params, &h.params, 0.0).unwrap().max_abs_diff(&g.params).unwrap(), 0.0);
    assert_eq!(soft_update(&g.params, &h.params, 1.0).unwrap().max_abs_diff(&h.params).unwrap(), 0.0);
    let mut theta = g.params.clone();
    let mut beta = g.params.clone();
    for (_, p) in theta.iter_mut() {
        p.value.fill(1.0);
    }
    for (_, p) in beta.iter_mut() {
        p.value.fill(0.0);
    }
    let out = soft_update(&theta, &beta, 0.8).unwrap();
    assert!(out.iter().all(|(_, p)| p.value.as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-15)));
    let other = tiny_gen(5, 3, 12);
    assert!(matches!(soft_update(&g.params, &other.params, 0.5), Err(Error::Shape { .. })));
    assert!(soft_update(&g.params, &h.params, 1.5).is_err());
}

#[test]
fn teacher_forcing_is_an_mle_step() {
    let g = tiny_gen(6, 4, 13);
    let batch = vec![seq(0, &[1, 2, 3, 4]), seq(1, &[5, 0, 2, 2])];
    let (mut a, mut b) = (g.clone(), g);
    let mut oa = AdamState::new(&a.params, crate::numerics::AdamConfig::with_lr(1e-4));
    let mut ob = oa.clone();
    let la = teacher_forcing_step(&batch, &mut a, &mut oa).unwrap();
    let lb = b.mle_step(&batch, &mut ob).unwrap();
    assert_eq!(la.to_bits(), lb.to_bits());
    assert_eq!(a.params.max_abs_diff(&b.params).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn bra_is_rank_only_and_monotone(raw in prop::collection::vec(0.0f64..1.0, 2..40), delta in 0.5f64..20.0) {
        let out = rescale_bra(&raw, delta).unwrap();
        let squashed: Vec<f64> = raw.iter().map(|r| (3.0 * r).exp() - 7.0).collect();
        prop_assert_eq!(&out, &rescale_bra(&squashed, delta).unwrap());
        for i in 0..raw.len() {
            prop_assert!(out[i] > 0.0 && out[i] < 1.0);
            for j in 0..raw.len() {
                if raw[i] > raw[j] {
                    prop_assert!(out[i] >= out[j]);
                }
            }
        }
    }

    #[test]
    fn baseline_centers_columns_and_keeps_argmax(rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 2..20)) {
        let table = RewardTable::raw(Tensor::from_rows(&rows));
        let out = subtract_baseline(&table, BaselineMode::BatchMean);
        for t in 0..3 {
            let col: Vec<f64> = (0..rows.len()).map(|i| out.values.get(i, t)).collect();
            prop_assert!((col.iter().sum::<f64>() / col.len() as f64).abs() < 1e-12);
            let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
            let before: Vec<f64> = rows.iter().map(|r| r[t]).collect();
            prop_assert_eq!(argmax(&before), argmax(&col));
        }
    }

    #[test]
    fn oda_is_finite_and_increasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(rescale_oda(hi).is_finite() && rescale_oda(hi) <= 1e6);
        prop_assert!(rescale_oda(lo) <= rescale_oda(hi));
    }
}

// Session-level checks on a tiny problem.

fn tiny_data() -> Vec<LabeledSequence> {
    let mut r = RngStream::new(20, 0);
    (0..48)
        .map(|i| {
            let label = i % 2;
            let base = if label == 0 { 2 } else { 5 };
            seq(label, &(0..5).map(|_| base + r.below(3)).collect::<Vec<_>>())
        })
        .collect()
}

fn tiny_session(schedule: TrainSchedule, seed: u64) -> AdversarialSession {
    let g = tiny_gen(8, 5, seed);
    let dcfg = DiscriminatorConfig { cnn_widths: vec![2, 3], cnn_filters: 4, ..DiscriminatorConfig::new(DiscriminatorKind::Cnn, 8, 5) };
    let mut r = RngStream::new(seed, 9);
    let emb = Tensor::from_vec(8, 6, (0..48).map(|_| r.normal()).collect()).unwrap();
    let d = Discriminator::new(dcfg, emb, &RngStream::new(seed, 10)).unwrap();
    AdversarialSession::new(schedule, g, d, &RngStream::new(seed, 11)).unwrap()
}

fn tiny_schedule() -> TrainSchedule {
    TrainSchedule {
        iterations: 3,
        g_steps: 2,
        d_steps: 1,
        d_epochs: 1,
        rollout: RolloutMode::MonteCarlo { k: 2 },
        batch_size: 8,
        d_samples: 16,
        d_batch_size: 8,
        g_lr: 1e-2,
        ..TrainSchedule::default()
    }
}

#[test]
fn zero_iterations_leave_everything_unchanged() {
    let data = tiny_data();
    let mut s = tiny_session(TrainSchedule { iterations: 0, ..tiny_schedule() }, 21);
    let before = s.generator.params.clone();
    adversarial_train(&mut s, &AdversarialData { train: &data, test: &data }, |_| Ok(())).unwrap();
    assert_eq!(s.generator.params.max_abs_diff(&before).unwrap(), 0.0);
    assert!(s.log.is_empty());
}

#[test]
fn same_seed_same_log() {
    let data = tiny_data();
    let run = || {
        let mut s = tiny_session(tiny_schedule(), 22);
        adversarial_train(&mut s, &AdversarialData { train: &data, test: &data }, |_| Ok(())).unwrap();
        s.log.into_iter().map(|m| IterationMetrics { wall_seconds: 0.0, ..m }).collect::<Vec<_>>()
    };
    let a = run();
    assert_eq!(a.len(), 3);
    assert_eq!(a, run());
}

#[test]
fn teacher_forcing_toggle_controls_the_counter() {
    let data = tiny_data();
    let d = AdversarialData { train: &data, test: &data };
    let mut on = tiny_session(TrainSchedule { iterations: 1, ..tiny_schedule() }, 23);
    on.run_iteration(&d).unwrap();
    assert_eq!(on.counters, StepCounters { pg_steps: 2, tf_steps: 2, d_steps: 1 });
    let mut off = tiny_session(TrainSchedule { iterations: 1, teacher_forcing: false, ..tiny_schedule() }, 23);
    off.run_iteration(&d).unwrap();
    assert_eq!(off.counters.tf_steps, 0);
}

#[test]
fn rollout_network_tracks_the_generator() {
    let data = tiny_data();
    let d = AdversarialData { train: &data, test: &data };
    let mut s = tiny_session(TrainSchedule { iterations: 4, ..tiny_schedule() }, 24);
    let alpha = s.schedule.alpha;
    let mut prev = 0.0;
    for _ in 0..4 {
        let m = s.run_iteration(&d).unwrap();
        // β' - θ' = α(β - θ) + α(θ - θ'), so the gap contracts by α.
        assert!(m.rollout_drift <= alpha * (prev + m.theta_step) + 1e-12, "{m:?}");
        prev = m.rollout_drift;
    }
}

#[test]
fn invalid_schedules_are_rejected() {
    for bad in [
        TrainSchedule { g_steps: 0, ..TrainSchedule::default() },
        TrainSchedule { alpha: 1.2, ..TrainSchedule::default() },
        TrainSchedule { rollout: RolloutMode::MonteCarlo { k: 0 }, ..TrainSchedule::default() },
        TrainSchedule { rescale: RescaleMode::Bra { delta: -1.0 }, ..TrainSchedule::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
