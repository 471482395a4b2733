use std::collections::HashMap;

use super::LabeledSequence;
use crate::numerics::RngStream;
use crate::{Error, Result};

/// Train/validation/test partition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<LabeledSequence>,
    pub valid: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.1, 0.2];

/// Largest-remainder rounding of `total * ratios`.
fn apportion(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut out = [0usize; 3];
    for i in 0..3 {
        out[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = total - out.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Per-label quotas whose rows sum to the label counts and whose columns sum
/// to the global apportionment.
fn stratified_quotas(label_counts: [usize; 2], ratios: &[f64; 3]) -> [[usize; 3]; 2] {
    let total = label_counts[0] + label_counts[1];
    let column = apportion(total, ratios);
    let mut quota = [[0usize; 3]; 2];
    let mut frac = Vec::new();
    for y in 0..2 {
        for s in 0..3 {
            let exact = label_counts[y] as f64 * ratios[s];
            quota[y][s] = exact.floor() as usize;
            frac.push((exact - exact.floor(), y, s));
        }
    }
    frac.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
    let row_left = |q: &[[usize; 3]; 2], y: usize| label_counts[y] - q[y].iter().sum::<usize>();
    let col_left = |q: &[[usize; 3]; 2], s: usize| column[s] - q[0][s] - q[1][s];
    for &(_, y, s) in &frac {
        if row_left(&quota, y) > 0 && col_left(&quota, s) > 0 {
            quota[y][s] += 1;
        }
    }
    // Balanced totals guarantee the remaining cells can always be filled.
    for y in 0..2 {
        for s in 0..3 {
            let k = row_left(&quota, y).min(col_left(&quota, s));
            quota[y][s] += k;
        }
    }
    quota
}

/// Stratified split by label. Identical sequences are kept together so no
/// sequence lands in two splits.
pub fn split(corpus: &[LabeledSequence], ratios: [f64; 3], rng: &RngStream) -> Result<SplitDataset> {
    if corpus.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "need at least 10 sequences to split, got {}",
            corpus.len()
        )));
    }
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios {ratios:?} must sum to 1")));
    }
    let mut label_counts = [0usize; 2];
    for s in corpus {
        if s.label > 1 {
            return Err(Error::LabelOutOfRange(s.label));
        }
        label_counts[s.label] += 1;
    }
    let quota = stratified_quotas(label_counts, &ratios);

    let mut out = SplitDataset::default();
    for y in 0..2 {
        // Group duplicates, first occurrence order, then shuffle the groups.
        let mut groups: Vec<Vec<&LabeledSequence>> = Vec::new();
        let mut seen: HashMap<&[usize], usize> = HashMap::new();
        for s in corpus.iter().filter(|s| s.label == y) {
            match seen.get(s.tokens.as_slice()) {
                Some(&g) => groups[g].push(s),
                None => {
                    seen.insert(&s.tokens, groups.len());
                    groups.push(vec![s]);
                }
            }
        }
        rng.derive("split", y as u64).shuffle(&mut groups);
        let mut filled = [0usize; 3];
        for group in groups {
            let target = (0..3).find(|&k| filled[k] < quota[y][k]).unwrap_or(2);
            filled[target] += group.len();
            let dest = match target {
                0 => &mut out.train,
                1 => &mut out.valid,
                _ => &mut out.test,
            };
            dest.extend(group.into_iter().cloned());
        }
    }
    Ok(out)
}
