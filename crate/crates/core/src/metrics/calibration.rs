//! Central-interval calibration and split-conformal adjustment.
//!
//! An [`IntervalSet`] holds, per unit, a predictive mean and sd plus the
//! realized target. The interval at level `q` is `mean ± m_q · sd`, where
//! `m_q` starts as the Gaussian quantile `z_{(1+q)/2}` and is replaced by
//! the conformal score quantile after adjustment. Units with `sd = 0` use a
//! separate absolute half-width per level (zero unless conformalized).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

pub const DEFAULT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn gaussian_multiplier(q: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf((1.0 + q) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub target: Vec<f64>,
    pub levels: Vec<f64>,
    /// Half-width multiplier on `sd`, one per level.
    pub multipliers: Vec<f64>,
    /// Half-width for units with `sd = 0`, one per level.
    pub zero_sd_halfwidths: Vec<f64>,
}

impl IntervalSet {
    /// Gaussian central intervals on the default grid.
    pub fn gaussian(mean: Vec<f64>, sd: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        Self::gaussian_with_levels(mean, sd, target, DEFAULT_LEVELS.to_vec())
    }

    pub fn gaussian_with_levels(mean: Vec<f64>, sd: Vec<f64>, target: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        let multipliers = levels.iter().map(|&q| gaussian_multiplier(q)).collect();
        let zero = vec![0.0; levels.len()];
        let set = Self {
            mean,
            sd,
            target,
            levels,
            multipliers,
            zero_sd_halfwidths: zero,
        };
        set.validate()?;
        Ok(set)
    }

    /// Builds intervals from a variance channel (sd = √var, negatives clamped).
    pub fn from_variance(mean: &[f64], variance: &[f64], target: &[f64]) -> Result<Self> {
        let sd = variance.iter().map(|v| v.max(0.0).sqrt()).collect();
        Self::gaussian(mean.to_vec(), sd, target.to_vec())
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if n == 0 {
            return Err(Error::Empty("interval set"));
        }
        if self.sd.len() != n || self.target.len() != n {
            return Err(Error::InvalidArgument(format!(
                "interval set columns differ in length: mean {n}, sd {}, target {}",
                self.sd.len(),
                self.target.len()
            )));
        }
        if self.sd.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidArgument("sd must be finite and >= 0".into()));
        }
        if self.levels.is_empty()
            || self.levels.iter().any(|&q| !(q > 0.0 && q < 1.0))
            || self.levels.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument(
                "coverage grid must be strictly increasing inside (0, 1)".into(),
            ));
        }
        if self.multipliers.len() != self.levels.len() || self.zero_sd_halfwidths.len() != self.levels.len() {
            return Err(Error::InvalidArgument("per-level widths do not match the grid".into()));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            mean: pick(&self.mean),
            sd: pick(&self.sd),
            target: pick(&self.target),
            ..self.clone()
        }
    }

    /// Half-width of unit `j` at grid level `i`.
    pub fn halfwidth(&self, i: usize, j: usize) -> f64 {
        if self.sd[j] > 0.0 {
            self.multipliers[i] * self.sd[j]
        } else {
            self.zero_sd_halfwidths[i]
        }
    }

    /// Fraction of targets inside the level-`i` intervals.
    pub fn coverage(&self, i: usize) -> f64 {
        let inside = (0..self.len())
            .filter(|&j| (self.target[j] - self.mean[j]).abs() <= self.halfwidth(i, j))
            .count();
        inside as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub nominal: f64,
    pub empirical: f64,
}

/// Reliability curve and ECE (mean |empirical − nominal| over the grid).
pub fn reliability_and_ece(intervals: &IntervalSet) -> Result<(Vec<CurvePoint>, f64)> {
    intervals.validate()?;
    let curve: Vec<CurvePoint> = intervals
        .levels
        .iter()
        .enumerate()
        .map(|(i, &q)| CurvePoint {
            nominal: q,
            empirical: intervals.coverage(i),
        })
        .collect();
    let ece = curve.iter().map(|p| (p.empirical - p.nominal).abs()).sum::<f64>() / curve.len() as f64;
    Ok((curve, ece))
}

/// Score quantiles fitted on a calibration fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalFit {
    pub levels: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub zero_sd_halfwidths: Vec<f64>,
    /// Calibration units scored on the normalized scale.
    pub n_normalized: usize,
    /// Calibration units with `sd = 0`, scored by absolute residual.
    pub n_fallback: usize,
}

/// `k`-th smallest score with `k = ⌈(n+1)q⌉`; infinite when `k > n`.
fn conformal_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((n as f64 + 1.0) * q).ceil() as usize;
    if n == 0 || k > n {
        f64::INFINITY
    } else {
        sorted[k.max(1) - 1]
    }
}

impl ConformalFit {
    pub fn fit(calibration: &IntervalSet) -> Result<Self> {
        calibration.validate()?;
        let mut normalized = Vec::with_capacity(calibration.len());
        let mut fallback = Vec::new();
        let mut all_abs = Vec::with_capacity(calibration.len());
        for j in 0..calibration.len() {
            let r = (calibration.target[j] - calibration.mean[j]).abs();
            all_abs.push(r);
            if calibration.sd[j] > 0.0 {
                normalized.push(r / calibration.sd[j]);
            } else {
                fallback.push(r);
            }
        }
        for v in [&mut normalized, &mut fallback, &mut all_abs] {
            v.sort_by(f64::total_cmp);
        }
        if !fallback.is_empty() {
            log::warn!(
                "{} calibration units have zero sd; using absolute residuals for them",
                fallback.len()
            );
        }
        // Without zero-sd calibration units, zero-sd targets borrow the
        // absolute-residual quantile of the whole fold.
        let abs_scores = if fallback.is_empty() { &all_abs } else { &fallback };
        let levels = calibration.levels.clone();
        Ok(Self {
            multipliers: levels.iter().map(|&q| conformal_quantile(&normalized, q)).collect(),
            zero_sd_halfwidths: levels.iter().map(|&q| conformal_quantile(abs_scores, q)).collect(),
            n_normalized: normalized.len(),
            n_fallback: fallback.len(),
            levels,
        })
    }

    pub fn apply(&self, target: &IntervalSet) -> Result<IntervalSet> {
        target.validate()?;
        if target.levels != self.levels {
            return Err(Error::InvalidArgument("calibration and target grids differ".into()));
        }
        Ok(IntervalSet {
            multipliers: self.multipliers.clone(),
            zero_sd_halfwidths: self.zero_sd_halfwidths.clone(),
            ..target.clone()
        })
    }
}

/// Split-conformal rescaling of `target` using scores from `calibration`.
pub fn conformal_adjust(calibration: &IntervalSet, target: &IntervalSet) -> Result<(IntervalSet, ConformalFit)> {
    let fit = ConformalFit::fit(calibration)?;
    Ok((fit.apply(target)?, fit))
}
