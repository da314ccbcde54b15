//! Monte Carlo Dropout variance estimators.
//!
//! `Total` runs with every mask active, `RepOnly` keeps the heads
//! deterministic, `PredOnly` keeps the encoder deterministic. By the law of
//! total variance the first splits (in expectation over masks) into the
//! other two; [`decompose`] measures all three marginally with independent
//! masks and records the leftover as the additivity gap.
//!
//! The treatment-effect variance sums the four arm components as if the
//! arms were independent. They share an encoder, so the true variance of
//! `Ȳ1 − Ȳ0` also carries a covariance term that is deliberately left out.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::quantile;
use crate::nn::{Matrix, RngStream};
use crate::twin::{Arm, DropoutMode, TwinNet};
use crate::{Error, Result};

/// Floor used when dividing by a near-zero total variance.
pub const EPS_FLOOR: f64 = 1e-12;

/// Per-unit predictive mean and population variance over `n_samples` passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub n_samples: usize,
    pub mode: DropoutMode,
}

/// Running mean / sum of squared deviations (Welford).
struct Accumulator {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = v - *m;
            *m += delta / self.count;
            *s += delta * (v - *m);
        }
    }

    fn finish(self, mode: DropoutMode) -> McResult {
        let n = self.count;
        McResult {
            variance: self.m2.into_iter().map(|s| (s / n).max(0.0)).collect(),
            mean: self.mean,
            n_samples: n as usize,
            mode,
        }
    }
}

/// `n` stochastic passes of `f_t(Φ(x))` in the given mode.
///
/// Variance divides by `n`. In `Off` mode a single deterministic pass is
/// run and the variance is exactly zero.
pub fn mc_predict(
    net: &TwinNet,
    x: &Matrix,
    arm: Arm,
    mode: DropoutMode,
    n: usize,
    rng: &mut RngStream,
) -> Result<McResult> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 MC samples, got {n}")));
    }
    if mode == DropoutMode::Off {
        let mean = net.forward(x, arm, mode, rng)?;
        let len = mean.len();
        return Ok(McResult {
            mean,
            variance: vec![0.0; len],
            n_samples: n,
            mode,
        });
    }

    let mut acc = Accumulator::new(x.rows());
    if mode.encoder_stochastic() {
        for _ in 0..n {
            let y = net.forward(x, arm, mode, rng)?;
            acc.push(&y);
        }
    } else {
        // Deterministic encoder: one latent pass serves every sample.
        let z = net.encode(x, mode, rng)?;
        for _ in 0..n {
            let y = net.forward_from_latent(&z, arm, mode, rng)?;
            acc.push(&y);
        }
    }
    Ok(acc.finish(mode))
}

/// Variance components for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmVariances {
    pub mean: Vec<f64>,
    pub var_rep: Vec<f64>,
    pub var_pred: Vec<f64>,
    pub var_tot: Vec<f64>,
    /// `var_tot − (var_rep + var_pred)`.
    pub gap: Vec<f64>,
}

/// Per-unit decomposition for both arms plus the treatment-effect summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBreakdown {
    pub arms: [ArmVariances; 2],
    /// `Ȳ1 − Ȳ0` from the total-mode means.
    pub tau_hat: Vec<f64>,
    /// Sum of the four rep/pred components.
    pub var_tau: Vec<f64>,
    pub n_samples: usize,
}

impl UncertaintyBreakdown {
    pub fn len(&self) -> usize {
        self.tau_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_hat.is_empty()
    }

    pub fn arm(&self, arm: Arm) -> &ArmVariances {
        &self.arms[arm.index()]
    }

    /// Assembles a breakdown from per-arm components, deriving the gap and τ fields.
    pub fn from_components(
        total: [&McResult; 2],
        rep: [&McResult; 2],
        pred: [&McResult; 2],
        n_samples: usize,
    ) -> Self {
        let arms = [0, 1].map(|a| {
            let gap = total[a]
                .variance
                .iter()
                .zip(&rep[a].variance)
                .zip(&pred[a].variance)
                .map(|((t, r), p)| t - (r + p))
                .collect();
            ArmVariances {
                mean: total[a].mean.clone(),
                var_rep: rep[a].variance.clone(),
                var_pred: pred[a].variance.clone(),
                var_tot: total[a].variance.clone(),
                gap,
            }
        });
        let tau_hat = arms[1]
            .mean
            .iter()
            .zip(&arms[0].mean)
            .map(|(a, b)| a - b)
            .collect();
        let var_tau = (0..arms[0].var_rep.len())
            .map(|i| arms[1].var_rep[i] + arms[0].var_rep[i] + arms[1].var_pred[i] + arms[0].var_pred[i])
            .collect();
        Self {
            arms,
            tau_hat,
            var_tau,
            n_samples,
        }
    }

    /// Rows restricted to `indices`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let arms = [0, 1].map(|a| {
            let s = &self.arms[a];
            ArmVariances {
                mean: pick(&s.mean),
                var_rep: pick(&s.var_rep),
                var_pred: pick(&s.var_pred),
                var_tot: pick(&s.var_tot),
                gap: pick(&s.gap),
            }
        });
        Self {
            arms,
            tau_hat: pick(&self.tau_hat),
            var_tau: pick(&self.var_tau),
            n_samples: self.n_samples,
        }
    }
}

const DECOMPOSE_JOBS: [(DropoutMode, Arm); 6] = [
    (DropoutMode::Total, Arm::Control),
    (DropoutMode::Total, Arm::Treated),
    (DropoutMode::RepOnly, Arm::Control),
    (DropoutMode::RepOnly, Arm::Treated),
    (DropoutMode::PredOnly, Arm::Control),
    (DropoutMode::PredOnly, Arm::Treated),
];

/// Runs total, rep-only and pred-only MC for both arms.
///
/// Each of the six runs gets its own stream forked from `rng` in a fixed
/// order, so the result does not depend on how rayon schedules them.
pub fn decompose(net: &TwinNet, x: &Matrix, n: usize, rng: &mut RngStream) -> Result<UncertaintyBreakdown> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 MC samples, got {n}")));
    }
    let streams: Vec<RngStream> = DECOMPOSE_JOBS.iter().map(|_| rng.fork()).collect();
    let results = DECOMPOSE_JOBS
        .par_iter()
        .zip(streams)
        .map(|(&(mode, arm), mut stream)| mc_predict(net, x, arm, mode, n, &mut stream))
        .collect::<Result<Vec<_>>>()?;
    Ok(UncertaintyBreakdown::from_components(
        [&results[0], &results[1]],
        [&results[2], &results[3]],
        [&results[4], &results[5]],
        n,
    ))
}

/// MC for a single mode on both arms (used when only one channel is wanted).
pub fn single_mode(
    net: &TwinNet,
    x: &Matrix,
    mode: DropoutMode,
    n: usize,
    rng: &mut RngStream,
) -> Result<[McResult; 2]> {
    let mut s0 = rng.fork();
    let mut s1 = rng.fork();
    let (r0, r1) = rayon::join(
        || mc_predict(net, x, Arm::Control, mode, n, &mut s0),
        || mc_predict(net, x, Arm::Treated, mode, n, &mut s1),
    );
    Ok([r0?, r1?])
}

/// Distribution of the relative additivity gap for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub median: f64,
    pub p95: f64,
    pub units: usize,
}

/// Additivity summary over a set of breakdowns, per arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub arms: [GapSummary; 2],
}

impl AdditivityReport {
    pub fn worst_median(&self) -> f64 {
        self.arms[0].median.max(self.arms[1].median)
    }
}

/// `|gap| / max(var_tot, EPS_FLOOR)` for every unit.
pub fn relative_gaps(arm: &ArmVariances) -> Vec<f64> {
    arm.gap
        .iter()
        .zip(&arm.var_tot)
        .map(|(g, t)| g.abs() / t.max(EPS_FLOOR))
        .collect()
}

pub fn additivity_report(breakdowns: &[UncertaintyBreakdown]) -> Result<AdditivityReport> {
    if breakdowns.is_empty() || breakdowns.iter().all(|b| b.is_empty()) {
        return Err(Error::Empty("additivity breakdowns"));
    }
    let arms = [0, 1].map(|a| {
        let gaps: Vec<f64> = breakdowns
            .iter()
            .flat_map(|b| relative_gaps(&b.arms[a]))
            .collect();
        GapSummary {
            median: quantile(&gaps, 0.5),
            p95: quantile(&gaps, 0.95),
            units: gaps.len(),
        }
    });
    Ok(AdditivityReport { arms })
}

pub const BREAKDOWN_COLUMNS: [&str; 13] = [
    "unit_id", "tau_hat", "var_rep0", "var_rep1", "var_pred0", "var_pred1", "var_tot0", "var_tot1",
    "var_tau", "gap0", "gap1", "mean0", "mean1",
];

/// Columns [`read_breakdown_csv`] cannot do without.
const REQUIRED_BREAKDOWN_COLUMNS: usize = 11;

/// Writes the full breakdown CSV.
pub fn write_breakdown_csv<W: Write>(out: W, b: &UncertaintyBreakdown) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BREAKDOWN_COLUMNS)?;
    let [a0, a1] = &b.arms;
    for i in 0..b.len() {
        let row = [
            b.tau_hat[i],
            a0.var_rep[i],
            a1.var_rep[i],
            a0.var_pred[i],
            a1.var_pred[i],
            a0.var_tot[i],
            a1.var_tot[i],
            b.var_tau[i],
            a0.gap[i],
            a1.gap[i],
            a0.mean[i],
            a1.mean[i],
        ];
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<breakdown csv>", e))?;
    Ok(())
}

/// Single-mode CSV: `unit_id, tau_hat, var_<mode>0, var_<mode>1`.
pub fn write_single_mode_csv<W: Write>(out: W, results: &[McResult; 2]) -> Result<()> {
    let suffix = match results[0].mode {
        DropoutMode::Total => "tot",
        DropoutMode::RepOnly => "rep",
        DropoutMode::PredOnly => "pred",
        DropoutMode::Off => "off",
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["unit_id".to_string(), "tau_hat".into(), format!("var_{suffix}0"), format!("var_{suffix}1")])?;
    for i in 0..results[0].mean.len() {
        let tau = results[1].mean[i] - results[0].mean[i];
        w.write_record([
            i.to_string(),
            tau.to_string(),
            results[0].variance[i].to_string(),
            results[1].variance[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<breakdown csv>", e))?;
    Ok(())
}

/// Reads a full breakdown CSV written by [`write_breakdown_csv`].
///
/// Arm means are optional; when absent they read as NaN.
pub fn read_breakdown_csv(path: &Path) -> Result<UncertaintyBreakdown> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let idx: Vec<usize> = BREAKDOWN_COLUMNS[1..REQUIRED_BREAKDOWN_COLUMNS]
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let mean_idx = [col("mean0").ok(), col("mean1").ok()];
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); idx.len()];
    let mut means = [Vec::new(), Vec::new()];
    let parse = |rec: &csv::StringRecord, j: usize, name: &str| -> Result<f64> {
        rec.get(j)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Data(format!("bad value in column {name}")))
    };
    for rec in r.records() {
        let rec = rec?;
        for (k, &j) in idx.iter().enumerate() {
            cols[k].push(parse(&rec, j, BREAKDOWN_COLUMNS[k + 1])?);
        }
        for a in 0..2 {
            means[a].push(match mean_idx[a] {
                Some(j) => parse(&rec, j, BREAKDOWN_COLUMNS[REQUIRED_BREAKDOWN_COLUMNS + a])?,
                None => f64::NAN,
            });
        }
    }
    let [tau_hat, rep0, rep1, pred0, pred1, tot0, tot1, var_tau, gap0, gap1]: [Vec<f64>; 10] =
        cols.try_into().expect("ten columns");
    let [mean0, mean1] = means;
    Ok(UncertaintyBreakdown {
        arms: [
            ArmVariances {
                mean: mean0,
                var_rep: rep0,
                var_pred: pred0,
                var_tot: tot0,
                gap: gap0,
            },
            ArmVariances {
                mean: mean1,
                var_rep: rep1,
                var_pred: pred1,
                var_tot: tot1,
                gap: gap1,
            },
        ],
        tau_hat,
        var_tau,
        n_samples: 0,
    })
}
