//! Unconditioned LSTM used by the bidirectional discriminator. Weight rows
//! are `[h; x]`, gate columns `[i f o g]`.

use crate::numerics::{axpy, dot, sigmoid, Tensor};

pub(super) struct Trace {
    hidden: usize,
    /// `(T+1) × H`, row 0 is the zero initial state.
    pub h: Vec<f64>,
    c: Vec<f64>,
    acts: Vec<f64>,
    tc: Vec<f64>,
}

impl Trace {
    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[(t + 1) * self.hidden..(t + 2) * self.hidden]
    }
}

fn cell(a: &mut [f64], c_prev: &[f64], c: &mut [f64], tc: &mut [f64], h: &mut [f64]) {
    let hd = c.len();
    for k in 0..hd {
        a[k] = sigmoid(a[k]);
        a[hd + k] = sigmoid(a[hd + k]);
        a[2 * hd + k] = sigmoid(a[2 * hd + k]);
        a[3 * hd + k] = a[3 * hd + k].tanh();
        c[k] = a[hd + k] * c_prev[k] + a[k] * a[3 * hd + k];
        tc[k] = c[k].tanh();
        h[k] = a[2 * hd + k] * tc[k];
    }
}

pub(super) fn forward(w: &Tensor, b: &[f64], hidden: usize, xs: &[&[f64]]) -> Trace {
    let t_len = xs.len();
    let mut tr = Trace {
        hidden,
        h: vec![0.0; (t_len + 1) * hidden],
        c: vec![0.0; (t_len + 1) * hidden],
        acts: vec![0.0; t_len * 4 * hidden],
        tc: vec![0.0; t_len * hidden],
    };
    for (t, x) in xs.iter().enumerate() {
        let a = &mut tr.acts[t * 4 * hidden..(t + 1) * 4 * hidden];
        a.copy_from_slice(b);
        for k in 0..hidden {
            let hv = tr.h[t * hidden + k];
            if hv != 0.0 {
                axpy(hv, w.row(k), a);
            }
        }
        for (k, &xv) in x.iter().enumerate() {
            axpy(xv, w.row(hidden + k), a);
        }
        let (c_lo, c_hi) = tr.c.split_at_mut((t + 1) * hidden);
        let h_hi = &mut tr.h[(t + 1) * hidden..];
        cell(
            a,
            &c_lo[t * hidden..],
            &mut c_hi[..hidden],
            &mut tr.tc[t * hidden..(t + 1) * hidden],
            &mut h_hi[..hidden],
        );
    }
    tr
}

/// Evaluation-only forward with the input projection `E W_x` precomputed
/// per token. Returns the `T × H` hidden states in processing order.
pub(super) fn forward_with_table(
    w: &Tensor,
    b: &[f64],
    hidden: usize,
    table: &Tensor,
    tokens: impl Iterator<Item = usize>,
) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut c_next = vec![0.0; hidden];
    let mut tc = vec![0.0; hidden];
    let mut a = vec![0.0; 4 * hidden];
    let mut out = Vec::new();
    for tok in tokens {
        a.copy_from_slice(b);
        axpy(1.0, table.row(tok), &mut a);
        for (k, &hv) in h.iter().enumerate() {
            if hv != 0.0 {
                axpy(hv, w.row(k), &mut a);
            }
        }
        cell(&mut a, &c, &mut c_next, &mut tc, &mut h);
        std::mem::swap(&mut c, &mut c_next);
        out.push(h.clone());
    }
    out
}

/// `E W_x` for every token: `V × 4H`.
pub(super) fn input_table(w: &Tensor, hidden: usize, embedding: &Tensor) -> Tensor {
    let mut table = Tensor::zeros(embedding.rows(), w.cols());
    for v in 0..embedding.rows() {
        let row = table.row_mut(v);
        for (k, &xv) in embedding.row(v).iter().enumerate() {
            axpy(xv, w.row(hidden + k), row);
        }
    }
    table
}

/// Backpropagates `dh` (`T × H`, loss gradient w.r.t. each output state)
/// into the weight and bias gradients. Inputs receive no gradient.
pub(super) fn backward(w: &Tensor, tr: &Trace, xs: &[&[f64]], dh: &[f64], gw: &mut Tensor, gb: &mut [f64]) {
    let hd = tr.hidden;
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut da = vec![0.0; 4 * hd];
    for t in (0..xs.len()).rev() {
        let a = &tr.acts[t * 4 * hd..(t + 1) * 4 * hd];
        let c_prev = &tr.c[t * hd..(t + 1) * hd];
        for k in 0..hd {
            let dhk = dh[t * hd + k] + dh_next[k];
            let (ig, fg, og, g) = (a[k], a[hd + k], a[2 * hd + k], a[3 * hd + k]);
            let tck = tr.tc[t * hd + k];
            let dc = dhk * og * (1.0 - tck * tck) + dc_next[k];
            da[k] = dc * g * ig * (1.0 - ig);
            da[hd + k] = dc * c_prev[k] * fg * (1.0 - fg);
            da[2 * hd + k] = dhk * tck * og * (1.0 - og);
            da[3 * hd + k] = dc * ig * (1.0 - g * g);
            dc_next[k] = dc * fg;
        }
        let h_prev = &tr.h[t * hd..(t + 1) * hd];
        for (k, &hv) in h_prev.iter().enumerate() {
            if hv != 0.0 {
                axpy(hv, &da, gw.row_mut(k));
            }
        }
        for (k, &xv) in xs[t].iter().enumerate() {
            axpy(xv, &da, gw.row_mut(hd + k));
        }
        axpy(1.0, &da, gb);
        // Only the recurrent block of W feeds back into h.
        for (k, out) in dh_next.iter_mut().enumerate() {
            *out = dot(w.row(k), &da);
        }
    }
}
