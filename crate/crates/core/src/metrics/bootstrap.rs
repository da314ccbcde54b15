//! Percentile bootstrap over units.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mean, quantile};
use crate::nn::RngStream;
use crate::{Error, Result};

pub const DEFAULT_BOOTSTRAP: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    /// Statistic on the full sample.
    pub estimate: f64,
    /// Mean of the bootstrap replicates.
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    /// Every replicate took the same value.
    pub degenerate: bool,
    #[serde(skip)]
    pub replicates: Vec<f64>,
}

impl BootstrapCi {
    fn from_replicates(estimate: f64, replicates: Vec<f64>, alpha: f64) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::Degenerate("no bootstrap replicate produced a value"));
        }
        let degenerate = replicates.iter().all(|&r| r == replicates[0]);
        let (lo, hi) = if degenerate {
            (replicates[0], replicates[0])
        } else {
            (quantile(&replicates, alpha / 2.0), quantile(&replicates, 1.0 - alpha / 2.0))
        };
        Ok(Self {
            estimate,
            mean: mean(&replicates),
            lo,
            hi,
            degenerate,
            replicates,
        })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Combines per-seed bootstraps: replicate `b` of the pooled statistic is
    /// the mean of replicate `b` across seeds, and the estimate is the mean
    /// of the per-seed estimates.
    pub fn pool(parts: &[BootstrapCi], alpha: f64) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Empty("bootstrap pool"));
        }
        let b = parts.iter().map(|p| p.replicates.len()).min().unwrap_or(0);
        let replicates: Vec<f64> = (0..b)
            .map(|i| parts.iter().map(|p| p.replicates[i]).sum::<f64>() / parts.len() as f64)
            .collect();
        let estimate = parts.iter().map(|p| p.estimate).sum::<f64>() / parts.len() as f64;
        Self::from_replicates(estimate, replicates, alpha)
    }
}

/// Bootstraps `statistic` over `n` units with `b` resamples.
///
/// `statistic` receives resampled unit indices. Replicates for which it
/// reports [`Error::Degenerate`] are skipped; any other error aborts.
pub fn bootstrap_ci<F>(n: usize, statistic: F, b: usize, alpha: f64, rng: &mut RngStream) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if n < 2 {
        return Err(Error::InvalidArgument(format!("bootstrap needs at least 2 units, got {n}")));
    }
    if b == 0 || !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::InvalidArgument(format!("bad bootstrap settings b={b}, alpha={alpha}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let estimate = statistic(&all)?;
    let mut idx = vec![0usize; n];
    let mut replicates = Vec::with_capacity(b);
    for _ in 0..b {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        match statistic(&idx) {
            Ok(v) => replicates.push(v),
            Err(Error::Degenerate(_)) => {}
            Err(e) => return Err(e),
        }
    }
    BootstrapCi::from_replicates(estimate, replicates, alpha)
}

/// Bootstrap CI of the sample mean.
pub fn bootstrap_mean_ci(values: &[f64], b: usize, alpha: f64, rng: &mut RngStream) -> Result<BootstrapCi> {
    bootstrap_ci(
        values.len(),
        |idx| Ok(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64),
        b,
        alpha,
        rng,
    )
}
