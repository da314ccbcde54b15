//! Evaluation statistics.

mod bootstrap;
mod calibration;
mod ensemble;
mod ood;
mod rank;
mod sweep;

pub use bootstrap::{bootstrap_ci, bootstrap_mean_ci, BootstrapCi, DEFAULT_BOOTSTRAP};
pub use calibration::{
    conformal_adjust, reliability_and_ece, ConformalFit, CurvePoint, IntervalSet, DEFAULT_LEVELS,
};
pub use ensemble::{ensemble_baseline, ensemble_variance, EnsembleResult};
pub use ood::{delta_sigma, roc_auc};
pub use rank::{average_ranks, pearson, spearman};
pub use sweep::{quantile_grid, rep_threshold_sweep, strictest_reliable, SweepPoint, MIN_RELIABLE};

/// Linear-interpolation quantile (type 7). Returns NaN for empty input.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divide by n).
pub fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}
