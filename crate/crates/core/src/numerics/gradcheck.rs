//! Central-difference validation of analytic gradients.

use super::{ParamStore, RngStream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates sampled per parameter tensor; tensors at or below this
    /// size are checked exhaustively.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            max_coords_per_param: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compares the gradients stored in `params` against central differences of
/// `loss`, returning the worst relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// Values are perturbed in place and restored before returning.
pub fn finite_diff_check<F>(
    mut loss: F,
    params: &mut ParamStore,
    config: GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(config.eps > 0.0) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let mut rng = RngStream::new(config.seed, 0x6772_6164);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
    for (pi, name) in names.iter().enumerate() {
        let id = super::ParamId(pi);
        let n = params.value(id).len();
        let coords: Vec<usize> = if n <= config.max_coords_per_param {
            (0..n).collect()
        } else {
            (0..config.max_coords_per_param).map(|_| rng.below(n)).collect()
        };
        for idx in coords {
            let original = params.value(id).as_slice()[idx];
            params.value_mut(id).as_mut_slice()[idx] = original + config.eps;
            let plus = loss(params);
            params.value_mut(id).as_mut_slice()[idx] = original - config.eps;
            let minus = loss(params);
            params.value_mut(id).as_mut_slice()[idx] = original;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss while perturbing {name}[{idx}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * config.eps);
            let analytic = params.grad(id).as_slice()[idx];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = idx;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
