//! Bidirectional LSTM with additive attention pooling:
//! `u_t = tanh(W_w h_t + b_w)`, `α = softmax_t(u_t · u_w)`, `s = Σ α_t h_t`.

use super::lstm;
use crate::numerics::{axpy, dot, mat_vec_acc, outer_acc, softmax_in_place, vec_mat_acc, Tensor};

pub(super) struct Weights<'a> {
    pub fw_w: &'a Tensor,
    pub fw_b: &'a [f64],
    pub bw_w: &'a Tensor,
    pub bw_b: &'a [f64],
    pub att_w: &'a Tensor,
    pub att_b: &'a [f64],
    pub att_u: &'a [f64],
    pub hidden: usize,
}

pub(super) struct Cache {
    fw: lstm::Trace,
    bw: lstm::Trace,
    states: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

fn attend(w: &Weights, states: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let u: Vec<Vec<f64>> = states
        .iter()
        .map(|h| {
            let mut u = w.att_b.to_vec();
            vec_mat_acc(h, w.att_w, &mut u);
            u.iter_mut().for_each(|v| *v = v.tanh());
            u
        })
        .collect();
    let mut alpha: Vec<f64> = u.iter().map(|ut| dot(ut, w.att_u)).collect();
    softmax_in_place(&mut alpha);
    let mut s = vec![0.0; 2 * w.hidden];
    for (a, h) in alpha.iter().zip(states) {
        axpy(*a, h, &mut s);
    }
    (s, u, alpha)
}

fn concat(fw: impl Fn(usize) -> Vec<f64>, bw: impl Fn(usize) -> Vec<f64>, t_len: usize) -> Vec<Vec<f64>> {
    (0..t_len)
        .map(|t| {
            let mut h = fw(t);
            h.extend(bw(t_len - 1 - t));
            h
        })
        .collect()
}

pub(super) fn features(w: &Weights, embedding: &Tensor, tokens: &[usize]) -> (Vec<f64>, Cache) {
    let t_len = tokens.len();
    let xs: Vec<&[f64]> = tokens.iter().map(|&t| embedding.row(t)).collect();
    let rev: Vec<&[f64]> = xs.iter().rev().copied().collect();
    let fw = lstm::forward(w.fw_w, w.fw_b, w.hidden, &xs);
    let bw = lstm::forward(w.bw_w, w.bw_b, w.hidden, &rev);
    let states = concat(|t| fw.h_at(t).to_vec(), |t| bw.h_at(t).to_vec(), t_len);
    let (s, u, alpha) = attend(w, &states);
    (s, Cache { fw, bw, states, u, alpha })
}

pub(super) struct Tables {
    fw: Tensor,
    bw: Tensor,
}

pub(super) fn tables(w: &Weights, embedding: &Tensor) -> Tables {
    Tables {
        fw: lstm::input_table(w.fw_w, w.hidden, embedding),
        bw: lstm::input_table(w.bw_w, w.hidden, embedding),
    }
}

pub(super) fn features_fast(w: &Weights, tables: &Tables, tokens: &[usize]) -> Vec<f64> {
    let fw = lstm::forward_with_table(w.fw_w, w.fw_b, w.hidden, &tables.fw, tokens.iter().copied());
    let bw = lstm::forward_with_table(w.bw_w, w.bw_b, w.hidden, &tables.bw, tokens.iter().rev().copied());
    let states = concat(|t| fw[t].clone(), |t| bw[t].clone(), tokens.len());
    attend(w, &states).0
}

pub(super) struct Grads<'a> {
    pub fw_w: &'a mut Tensor,
    pub fw_b: &'a mut Tensor,
    pub bw_w: &'a mut Tensor,
    pub bw_b: &'a mut Tensor,
    pub att_w: &'a mut Tensor,
    pub att_b: &'a mut Tensor,
    pub att_u: &'a mut Tensor,
}

pub(super) fn backward(w: &Weights, embedding: &Tensor, tokens: &[usize], cache: &Cache, ds: &[f64], g: Grads) {
    let t_len = tokens.len();
    let hd = w.hidden;
    let d_alpha: Vec<f64> = cache.states.iter().map(|h| dot(h, ds)).collect();
    let mean: f64 = cache.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
    let mut dh_fw = vec![0.0; t_len * hd];
    let mut dh_bw = vec![0.0; t_len * hd];
    for t in 0..t_len {
        let a = cache.alpha[t];
        let de = a * (d_alpha[t] - mean);
        let u = &cache.u[t];
        axpy(de, u, g.att_u.as_mut_slice());
        let d_pre: Vec<f64> = u.iter().zip(w.att_u).map(|(ut, uw)| de * uw * (1.0 - ut * ut)).collect();
        let h = &cache.states[t];
        outer_acc(h, &d_pre, g.att_w);
        axpy(1.0, &d_pre, g.att_b.as_mut_slice());
        let mut dh = vec![0.0; 2 * hd];
        axpy(a, ds, &mut dh);
        mat_vec_acc(w.att_w, &d_pre, &mut dh);
        dh_fw[t * hd..(t + 1) * hd].copy_from_slice(&dh[..hd]);
        let r = t_len - 1 - t;
        dh_bw[r * hd..(r + 1) * hd].copy_from_slice(&dh[hd..]);
    }
    let xs: Vec<&[f64]> = tokens.iter().map(|&t| embedding.row(t)).collect();
    let rev: Vec<&[f64]> = xs.iter().rev().copied().collect();
    lstm::backward(w.fw_w, &cache.fw, &xs, &dh_fw, g.fw_w, g.fw_b.as_mut_slice());
    lstm::backward(w.bw_w, &cache.bw, &rev, &dh_bw, g.bw_w, g.bw_b.as_mut_slice());
}

/// Attention weights for one sequence (evaluation mode).
pub(super) fn attention(w: &Weights, embedding: &Tensor, tokens: &[usize]) -> Vec<f64> {
    features(w, embedding, tokens).1.alpha
}
