//! Convolution over frozen embeddings, max-pool over time, one highway layer.

use crate::numerics::{axpy, mat_vec_acc, outer_acc, sigmoid, vec_mat_acc, Tensor};

pub(super) struct ConvBank<'a> {
    pub width: usize,
    /// `(width·E) × filters`, row `k·E + d` multiplies `e(x_{i+k})[d]`.
    pub weight: &'a Tensor,
    pub bias: &'a [f64],
}

pub(super) struct Highway<'a> {
    pub t_w: &'a Tensor,
    pub t_b: &'a [f64],
    pub g_w: &'a Tensor,
    pub g_b: &'a [f64],
}

pub(super) struct Cache {
    /// Per pooled feature: winning window start and its pre-activation.
    argmax: Vec<(usize, f64)>,
    pooled: Vec<f64>,
    gate: Vec<f64>,
    g_pre: Vec<f64>,
    g: Vec<f64>,
}

/// Precomputed `e(tok) · W[k·E.., :]` for every bank, offset and token.
pub(super) struct ConvTables {
    /// Per bank: `(width·V) × filters`, row `k·V + tok`.
    tables: Vec<Tensor>,
    vocab: usize,
}

pub(super) fn conv_tables(banks: &[ConvBank], embedding: &Tensor) -> ConvTables {
    let (v, e) = (embedding.rows(), embedding.cols());
    let tables = banks
        .iter()
        .map(|bank| {
            let mut t = Tensor::zeros(bank.width * v, bank.weight.cols());
            for k in 0..bank.width {
                for tok in 0..v {
                    let row = t.row_mut(k * v + tok);
                    for (d, &x) in embedding.row(tok).iter().enumerate() {
                        axpy(x, bank.weight.row(k * e + d), row);
                    }
                }
            }
            t
        })
        .collect();
    ConvTables { tables, vocab: v }
}

/// Max-pooled pre-activations per filter (first maximum wins ties).
fn pool(banks: &[ConvBank], tokens: &[usize], pre_at: impl Fn(usize, usize, &mut [f64])) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (bi, bank) in banks.iter().enumerate() {
        let nf = bank.bias.len();
        let mut best = vec![(0usize, f64::NEG_INFINITY); nf];
        let mut pre = vec![0.0; nf];
        for i in 0..=tokens.len() - bank.width {
            pre.copy_from_slice(bank.bias);
            pre_at(bi, i, &mut pre);
            for j in 0..nf {
                if pre[j] > best[j].1 {
                    best[j] = (i, pre[j]);
                }
            }
        }
        out.extend(best);
    }
    out
}

fn highway_forward(hw: &Highway, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut gate = hw.t_b.to_vec();
    vec_mat_acc(x, hw.t_w, &mut gate);
    gate.iter_mut().for_each(|v| *v = sigmoid(*v));
    let mut g_pre = hw.g_b.to_vec();
    vec_mat_acc(x, hw.g_w, &mut g_pre);
    let g: Vec<f64> = g_pre.iter().map(|&v| v.max(0.0)).collect();
    let y = (0..x.len()).map(|k| gate[k] * g[k] + (1.0 - gate[k]) * x[k]).collect();
    (y, gate, g_pre, g)
}

pub(super) fn features(banks: &[ConvBank], hw: &Highway, embedding: &Tensor, tokens: &[usize]) -> (Vec<f64>, Cache) {
    let e = embedding.cols();
    let argmax = pool(banks, tokens, |bi, i, pre| {
        let bank = &banks[bi];
        for k in 0..bank.width {
            for (d, &x) in embedding.row(tokens[i + k]).iter().enumerate() {
                axpy(x, bank.weight.row(k * e + d), pre);
            }
        }
    });
    let pooled: Vec<f64> = argmax.iter().map(|&(_, p)| p.max(0.0)).collect();
    let (y, gate, g_pre, g) = highway_forward(hw, &pooled);
    (y, Cache { argmax, pooled, gate, g_pre, g })
}

pub(super) fn features_fast(banks: &[ConvBank], hw: &Highway, tables: &ConvTables, tokens: &[usize]) -> Vec<f64> {
    let v = tables.vocab;
    let argmax = pool(banks, tokens, |bi, i, pre| {
        for k in 0..banks[bi].width {
            axpy(1.0, tables.tables[bi].row(k * v + tokens[i + k]), pre);
        }
    });
    let pooled: Vec<f64> = argmax.iter().map(|&(_, p)| p.max(0.0)).collect();
    highway_forward(hw, &pooled).0
}

/// Gradient sinks, in the order of the conv banks followed by the highway.
pub(super) struct Grads<'a> {
    pub banks: Vec<(&'a mut Tensor, &'a mut Tensor)>,
    pub t_w: &'a mut Tensor,
    pub t_b: &'a mut Tensor,
    pub g_w: &'a mut Tensor,
    pub g_b: &'a mut Tensor,
}

pub(super) fn backward(banks: &[ConvBank], hw: &Highway, embedding: &Tensor, tokens: &[usize], cache: &Cache, dy: &[f64], grads: Grads) {
    let x = &cache.pooled;
    let n = x.len();
    let mut dx: Vec<f64> = (0..n).map(|k| dy[k] * (1.0 - cache.gate[k])).collect();
    let dt_pre: Vec<f64> = (0..n)
        .map(|k| dy[k] * (cache.g[k] - x[k]) * cache.gate[k] * (1.0 - cache.gate[k]))
        .collect();
    let dg_pre: Vec<f64> = (0..n)
        .map(|k| if cache.g_pre[k] > 0.0 { dy[k] * cache.gate[k] } else { 0.0 })
        .collect();
    outer_acc(x, &dt_pre, grads.t_w);
    axpy(1.0, &dt_pre, grads.t_b.as_mut_slice());
    outer_acc(x, &dg_pre, grads.g_w);
    axpy(1.0, &dg_pre, grads.g_b.as_mut_slice());
    mat_vec_acc(hw.t_w, &dt_pre, &mut dx);
    mat_vec_acc(hw.g_w, &dg_pre, &mut dx);

    let e = embedding.cols();
    let mut feature = 0;
    for (bank, (gw, gb)) in banks.iter().zip(grads.banks) {
        for j in 0..bank.bias.len() {
            let (start, pre) = cache.argmax[feature];
            let d = dx[feature];
            feature += 1;
            if pre <= 0.0 || d == 0.0 {
                continue;
            }
            gb.as_mut_slice()[j] += d;
            for k in 0..bank.width {
                for (dd, &xv) in embedding.row(tokens[start + k]).iter().enumerate() {
                    let r = gw.row_mut(k * e + dd);
                    r[j] += d * xv;
                }
            }
        }
    }
}
