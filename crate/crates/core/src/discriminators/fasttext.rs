use crate::numerics::{axpy, Tensor};

/// Hashes an ordered token pair into `buckets` bigram slots.
pub fn bigram_bucket(a: usize, b: usize, buckets: usize) -> usize {
    let mut x = (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_add(0x632B_E59B_D9B4_E019);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 29;
    (x % buckets as u64) as usize
}

fn count(t_len: usize, bigrams: bool) -> f64 {
    (t_len + if bigrams { t_len.saturating_sub(1) } else { 0 }) as f64
}

/// Mean of the unigram embeddings and, if present, the hashed bigram rows.
pub(super) fn features(embedding: &Tensor, bigram: Option<&Tensor>, tokens: &[usize]) -> Vec<f64> {
    let mut f = vec![0.0; embedding.cols()];
    for &t in tokens {
        axpy(1.0, embedding.row(t), &mut f);
    }
    if let Some(table) = bigram {
        for w in tokens.windows(2) {
            axpy(1.0, table.row(bigram_bucket(w[0], w[1], table.rows())), &mut f);
        }
    }
    let n = count(tokens.len(), bigram.is_some());
    f.iter_mut().for_each(|v| *v /= n);
    f
}

pub(super) fn backward(bigram_grad: &mut Tensor, tokens: &[usize], df: &[f64]) {
    let scale = 1.0 / count(tokens.len(), true);
    let buckets = bigram_grad.rows();
    for w in tokens.windows(2) {
        axpy(scale, df, bigram_grad.row_mut(bigram_bucket(w[0], w[1], buckets)));
    }
}
