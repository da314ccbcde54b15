//! Representation-variance threshold sweep.
//!
//! Units whose σ²_rep exceeds a threshold are dropped and ρ(σ²_pred, error)
//! is recomputed on the rest. Points keeping too few units are flagged.

use serde::{Deserialize, Serialize};

use super::{quantile, spearman};
use crate::{Error, Result};

/// Fewer retained units than this marks a sweep point unreliable.
pub const MIN_RELIABLE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    /// `None` when fewer than 3 units remain or a channel is constant.
    pub rho_pred: Option<f64>,
    pub n_retained: usize,
    pub reliable: bool,
}

pub fn rep_threshold_sweep(var_rep: &[f64], var_pred: &[f64], abs_err: &[f64], grid: &[f64]) -> Result<Vec<SweepPoint>> {
    let n = var_rep.len();
    if var_pred.len() != n || abs_err.len() != n {
        return Err(Error::InvalidArgument(format!(
            "sweep inputs differ in length: {n}, {}, {}",
            var_pred.len(),
            abs_err.len()
        )));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &threshold in grid {
        let keep: Vec<usize> = (0..n).filter(|&i| var_rep[i] <= threshold).collect();
        let pred: Vec<f64> = keep.iter().map(|&i| var_pred[i]).collect();
        let err: Vec<f64> = keep.iter().map(|&i| abs_err[i]).collect();
        let rho_pred = if keep.len() >= 3 {
            match spearman(&pred, &err) {
                Ok(r) => Some(r),
                Err(Error::Degenerate(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        out.push(SweepPoint {
            threshold,
            rho_pred,
            n_retained: keep.len(),
            reliable: keep.len() >= MIN_RELIABLE && rho_pred.is_some(),
        });
    }
    Ok(out)
}

/// Thresholds at `k` evenly spaced quantiles of `var_rep`, ending at its max.
pub fn quantile_grid(var_rep: &[f64], k: usize) -> Vec<f64> {
    (1..=k).map(|i| quantile(var_rep, i as f64 / k as f64)).collect()
}

/// The reliable point with the smallest threshold.
pub fn strictest_reliable(curve: &[SweepPoint]) -> Option<&SweepPoint> {
    curve
        .iter()
        .filter(|p| p.reliable)
        .min_by(|a, b| a.threshold.total_cmp(&b.threshold))
}
