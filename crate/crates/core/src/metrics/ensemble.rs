//! Deterministic-ensemble baseline: variance of τ̂ across independently
//! seeded twin networks, each evaluated without dropout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::twin::{train, LabeledDataset, TwinNetConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    /// Member-mean τ̂ per unit.
    pub tau_mean: Vec<f64>,
    /// Population variance of τ̂ across members per unit.
    pub variance: Vec<f64>,
    pub member_seeds: Vec<u64>,
}

/// Per-unit mean and population variance across member predictions.
pub fn ensemble_variance(members: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = members.first() else {
        return Err(Error::Empty("ensemble members"));
    };
    let n = first.len();
    if members.iter().any(|m| m.len() != n) {
        return Err(Error::InvalidArgument("ensemble members predict different unit counts".into()));
    }
    let m = members.len() as f64;
    let mut mean = vec![0.0; n];
    for member in members {
        for (acc, &v) in mean.iter_mut().zip(member) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; n];
    for member in members {
        for ((acc, &v), &mu) in var.iter_mut().zip(member).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    Ok((mean, var))
}

/// Trains `m` members with seeds `config.seed + i` and pools their τ̂ on `test_x`.
///
/// Members are trained exactly as `config` says (dropout during training is
/// the caller's choice) and always predict with dropout off.
pub fn ensemble_baseline(train_data: &LabeledDataset, test_x: &Matrix, config: &TwinNetConfig, m: usize) -> Result<EnsembleResult> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("ensemble needs at least 2 members, got {m}")));
    }
    let seeds: Vec<u64> = (0..m as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let members = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let cfg = TwinNetConfig { seed, ..config.clone() };
            train(train_data, &cfg)
                .and_then(|(net, _)| net.predict_tau(test_x))
                .map_err(|e| Error::EnsembleMember { member: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let (tau_mean, variance) = ensemble_variance(&members)?;
    Ok(EnsembleResult {
        tau_mean,
        variance,
        member_seeds: seeds,
    })
}
