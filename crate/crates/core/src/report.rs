//! Evaluation reports: per-channel error correlation, shift detection and
//! interval calibration, plus seed aggregation and flat CSV tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::metrics::{
    bootstrap_ci, conformal_adjust, delta_sigma, quantile_grid, reliability_and_ece, rep_threshold_sweep, roc_auc,
    spearman, BootstrapCi, ConformalFit, CurvePoint, IntervalSet, SweepPoint, DEFAULT_BOOTSTRAP, MIN_RELIABLE,
};
use crate::nn::RngStream;
use crate::twin::LabeledDataset;
use crate::uncertainty::{additivity_report, AdditivityReport, UncertaintyBreakdown};
use crate::{Error, Result};

/// Uncertainty channels scored against the error signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// `var_rep0 + var_rep1`
    Rep,
    /// `var_pred0 + var_pred1`
    Pred,
    /// `var_tot0 + var_tot1`
    Tot,
    Pred0,
    Pred1,
}

impl Channel {
    pub const ALL: [Channel; 5] = [Channel::Rep, Channel::Pred, Channel::Tot, Channel::Pred0, Channel::Pred1];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Rep => "rep",
            Channel::Pred => "pred",
            Channel::Tot => "tot",
            Channel::Pred0 => "pred0",
            Channel::Pred1 => "pred1",
        }
    }

    pub fn values(self, b: &UncertaintyBreakdown) -> Vec<f64> {
        let [a0, a1] = &b.arms;
        let sum = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p + q).collect();
        match self {
            Channel::Rep => sum(&a0.var_rep, &a1.var_rep),
            Channel::Pred => sum(&a0.var_pred, &a1.var_pred),
            Channel::Tot => sum(&a0.var_tot, &a1.var_tot),
            Channel::Pred0 => a0.var_pred.clone(),
            Channel::Pred1 => a1.var_pred.clone(),
        }
    }
}

/// What the uncertainty is asked to predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorTarget {
    /// `|τ̂ − τ|` against known effects.
    Effect,
    /// `|Ȳ_T − y|`, the factual error, when effects are unknown.
    Factual,
}

/// Error signal and the matching raw intervals for a test set.
pub fn error_and_intervals(b: &UncertaintyBreakdown, data: &LabeledDataset) -> Result<(ErrorTarget, Vec<f64>, IntervalSet)> {
    let [a0, a1] = &b.arms;
    total_mode_targets([&a0.mean, &a1.mean], [&a0.var_tot, &a1.var_tot], data)
}

/// Same as [`error_and_intervals`] from total-mode arm means and variances.
///
/// With known effects the interval is `τ̂ ± z·√(var_tot0 + var_tot1)`
/// around `τ̂ = Ȳ1 − Ȳ0`; otherwise it is the factual arm's `Ȳ_T ± z·√var_tot_T`.
pub fn total_mode_targets(
    means: [&[f64]; 2],
    var_tot: [&[f64]; 2],
    data: &LabeledDataset,
) -> Result<(ErrorTarget, Vec<f64>, IntervalSet)> {
    let n = data.len();
    if means.iter().chain(&var_tot).any(|v| v.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "uncertainty columns do not match the {n} dataset rows"
        )));
    }
    match data.tau_true() {
        Some(tau) => {
            let tau_hat: Vec<f64> = means[1].iter().zip(means[0]).map(|(a, b)| a - b).collect();
            let var: Vec<f64> = var_tot[0].iter().zip(var_tot[1]).map(|(a, b)| a + b).collect();
            let err = tau_hat.iter().zip(tau).map(|(h, t)| (h - t).abs()).collect();
            Ok((ErrorTarget::Effect, err, IntervalSet::from_variance(&tau_hat, &var, tau)?))
        }
        None => {
            let mean: Vec<f64> = (0..n).map(|i| means[usize::from(data.t[i])][i]).collect();
            let var: Vec<f64> = (0..n).map(|i| var_tot[usize::from(data.t[i])][i]).collect();
            if mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Data("factual error needs arm means in the breakdown".into()));
            }
            let err = mean.iter().zip(&data.y).map(|(m, y)| (m - y).abs()).collect();
            Ok((ErrorTarget::Factual, err, IntervalSet::from_variance(&mean, &var, &data.y)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub bootstrap: usize,
    pub alpha: f64,
    /// Number of quantile thresholds in the σ²_rep sweep.
    pub sweep_points: usize,
    /// Fail instead of skipping shift metrics when OOD flags are missing.
    pub require_ood: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bootstrap: DEFAULT_BOOTSTRAP,
            alpha: 0.05,
            sweep_points: 20,
            require_ood: false,
        }
    }
}

/// Per-channel statistics. `None` marks a degenerate statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub channel: Channel,
    pub rho: Option<BootstrapCi>,
    pub delta_sigma: Option<BootstrapCi>,
    pub auc: Option<BootstrapCi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece_raw: f64,
    pub curve_raw: Vec<CurvePoint>,
    pub ece_conformal: Option<f64>,
    pub curve_conformal: Option<Vec<CurvePoint>>,
    pub conformal: Option<ConformalFit>,
}

/// Where conformal scores come from.
#[derive(Debug, Clone)]
pub enum Calibration<'a> {
    None,
    /// A held-out fold from the test distribution.
    Fold(&'a IntervalSet),
    /// Two-fold cross-fit on the test units: even indices calibrate the odd
    /// ones and vice versa; the two ECEs are averaged.
    SplitTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_units: usize,
    pub error_target: ErrorTarget,
    pub channels: Vec<ChannelMetrics>,
    pub calibration: CalibrationReport,
    pub sweep: Vec<SweepPoint>,
    /// Sweep thresholds as quantile levels of σ²_rep.
    pub sweep_levels: Vec<f64>,
    pub additivity: AdditivityReport,
    #[serde(default)]
    pub ensemble_rho: Option<BootstrapCi>,
}

impl EvalReport {
    pub fn channel(&self, c: Channel) -> &ChannelMetrics {
        self.channels.iter().find(|m| m.channel == c).expect("every channel is reported")
    }

    pub fn rho(&self, c: Channel) -> Option<f64> {
        self.channel(c).rho.as_ref().map(|ci| ci.estimate)
    }
}

/// Bootstraps `stat`, mapping a degenerate full-sample value to `None`.
fn optional_ci<F>(n: usize, stat: F, opts: &EvalOptions, rng: &mut RngStream) -> Result<Option<BootstrapCi>>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    match bootstrap_ci(n, stat, opts.bootstrap, opts.alpha, rng) {
        Ok(ci) => Ok(Some(ci)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Shift metrics treat a resample missing one group as degenerate.
fn as_degenerate(e: Error) -> Error {
    match e {
        Error::Empty(what) => Error::Degenerate(what),
        other => other,
    }
}

pub fn spearman_ci(u: &[f64], e: &[f64], opts: &EvalOptions, rng: &mut RngStream) -> Result<Option<BootstrapCi>> {
    optional_ci(u.len(), |idx| spearman(&pick(u, idx), &pick(e, idx)), opts, rng)
}

fn calibrate(raw: &IntervalSet, calibration: &Calibration<'_>) -> Result<CalibrationReport> {
    let (curve_raw, ece_raw) = reliability_and_ece(raw)?;
    let (ece_conformal, curve_conformal, conformal) = match calibration {
        Calibration::None => (None, None, None),
        Calibration::Fold(cal) => {
            let (adj, fit) = conformal_adjust(cal, raw)?;
            let (curve, ece) = reliability_and_ece(&adj)?;
            (Some(ece), Some(curve), Some(fit))
        }
        Calibration::SplitTest => {
            let even: Vec<usize> = (0..raw.len()).step_by(2).collect();
            let odd: Vec<usize> = (1..raw.len()).step_by(2).collect();
            if odd.is_empty() {
                return Err(Error::InvalidArgument("cross-fit calibration needs at least 2 units".into()));
            }
            let (a, b) = (raw.subset(&even), raw.subset(&odd));
            let (adj_b, fit) = conformal_adjust(&a, &b)?;
            let (adj_a, _) = conformal_adjust(&b, &a)?;
            let (curve_a, ece_a) = reliability_and_ece(&adj_a)?;
            let (curve_b, ece_b) = reliability_and_ece(&adj_b)?;
            let (na, nb) = (a.len() as f64, b.len() as f64);
            let curve = curve_a
                .iter()
                .zip(&curve_b)
                .map(|(p, q)| CurvePoint {
                    nominal: p.nominal,
                    empirical: (p.empirical * na + q.empirical * nb) / (na + nb),
                })
                .collect();
            (Some((ece_a + ece_b) / 2.0), Some(curve), Some(fit))
        }
    };
    Ok(CalibrationReport {
        ece_raw,
        curve_raw,
        ece_conformal,
        curve_conformal,
        conformal,
    })
}

/// Scores a breakdown against its test set.
pub fn evaluate(
    b: &UncertaintyBreakdown,
    data: &LabeledDataset,
    calibration: Calibration<'_>,
    opts: &EvalOptions,
    rng: &mut RngStream,
) -> Result<EvalReport> {
    let (error_target, err, raw) = error_and_intervals(b, data)?;
    if data.ood.is_none() && opts.require_ood {
        return Err(Error::MissingColumn("ood_flag".into()));
    }
    let mut channels = Vec::with_capacity(Channel::ALL.len());
    for c in Channel::ALL {
        let u = c.values(b);
        let mut stream = rng.fork();
        let rho = spearman_ci(&u, &err, opts, &mut stream)?;
        let (delta, auc) = match &data.ood {
            Some(flags) => (
                optional_ci(
                    u.len(),
                    |idx| delta_sigma(&pick(&u, idx), &pick(flags, idx)).map_err(as_degenerate),
                    opts,
                    &mut stream,
                )?,
                optional_ci(u.len(), |idx| roc_auc(&pick(&u, idx), &pick(flags, idx)), opts, &mut stream)?,
            ),
            None => (None, None),
        };
        channels.push(ChannelMetrics {
            channel: c,
            rho,
            delta_sigma: delta,
            auc,
        });
    }
    let rep = Channel::Rep.values(b);
    let pred = Channel::Pred.values(b);
    let k = opts.sweep_points.max(1);
    let grid = quantile_grid(&rep, k);
    let sweep = rep_threshold_sweep(&rep, &pred, &err, &grid)?;
    Ok(EvalReport {
        n_units: b.len(),
        error_target,
        channels,
        calibration: calibrate(&raw, &calibration)?,
        sweep,
        sweep_levels: (1..=k).map(|i| i as f64 / k as f64).collect(),
        additivity: additivity_report(std::slice::from_ref(b))?,
        ensemble_rho: None,
    })
}

/// Mean and range of a per-seed scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl SeedSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Sweep point averaged over seeds at a common σ²_rep quantile level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSweepPoint {
    pub level: f64,
    pub threshold: f64,
    /// Mean over seeds; `None` if any seed was degenerate.
    pub rho_pred: Option<f64>,
    pub min_retained: usize,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledChannel {
    pub channel: Channel,
    pub rho: Option<BootstrapCi>,
    pub delta_sigma: Option<BootstrapCi>,
    pub auc: Option<BootstrapCi>,
}

/// Seed-pooled report: CIs come from averaging replicate `b` across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledReport {
    pub seeds: Vec<u64>,
    pub channels: Vec<PooledChannel>,
    pub ece_raw: Option<SeedSummary>,
    pub ece_conformal: Option<SeedSummary>,
    pub curve_raw: Vec<CurvePoint>,
    pub curve_conformal: Option<Vec<CurvePoint>>,
    pub sweep: Vec<PooledSweepPoint>,
    pub additivity_median: Option<SeedSummary>,
    pub ensemble_rho: Option<BootstrapCi>,
}

impl PooledReport {
    pub fn channel(&self, c: Channel) -> &PooledChannel {
        self.channels.iter().find(|m| m.channel == c).expect("every channel is reported")
    }

    pub fn rho(&self, c: Channel) -> Option<f64> {
        self.channel(c).rho.as_ref().map(|ci| ci.estimate)
    }

    /// Pooled ρ_pred without the σ²_rep filter (the last sweep level is the max).
    pub fn unfiltered_rho_pred(&self) -> Option<f64> {
        self.sweep.last().and_then(|p| p.rho_pred)
    }

    /// The reliable pooled point with the lowest level.
    pub fn strictest_reliable(&self) -> Option<&PooledSweepPoint> {
        self.sweep.iter().find(|p| p.reliable && p.rho_pred.is_some())
    }
}

fn pool_optional(parts: Vec<Option<&BootstrapCi>>, alpha: f64) -> Result<Option<BootstrapCi>> {
    let Some(parts) = parts.into_iter().collect::<Option<Vec<_>>>() else {
        return Ok(None);
    };
    let owned: Vec<BootstrapCi> = parts.into_iter().cloned().collect();
    BootstrapCi::pool(&owned, alpha).map(Some)
}

fn mean_curve(curves: &[&[CurvePoint]]) -> Vec<CurvePoint> {
    let k = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..k)
        .map(|i| CurvePoint {
            nominal: curves[0][i].nominal,
            empirical: curves.iter().map(|c| c[i].empirical).sum::<f64>() / curves.len() as f64,
        })
        .collect()
}

pub fn pool_reports(reports: &[EvalReport], seeds: &[u64], alpha: f64) -> Result<PooledReport> {
    if reports.is_empty() {
        return Err(Error::Empty("reports to pool"));
    }
    let channels = Channel::ALL
        .iter()
        .map(|&c| {
            let get = |f: fn(&ChannelMetrics) -> Option<&BootstrapCi>| {
                pool_optional(reports.iter().map(|r| f(r.channel(c))).collect(), alpha)
            };
            Ok(PooledChannel {
                channel: c,
                rho: get(|m| m.rho.as_ref())?,
                delta_sigma: get(|m| m.delta_sigma.as_ref())?,
                auc: get(|m| m.auc.as_ref())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ece_raw: Vec<f64> = reports.iter().map(|r| r.calibration.ece_raw).collect();
    let ece_conf: Option<Vec<f64>> = reports.iter().map(|r| r.calibration.ece_conformal).collect();
    let raw_curves: Vec<&[CurvePoint]> = reports.iter().map(|r| r.calibration.curve_raw.as_slice()).collect();
    let conf_curves: Option<Vec<&[CurvePoint]>> = reports
        .iter()
        .map(|r| r.calibration.curve_conformal.as_deref())
        .collect();
    let k = reports.iter().map(|r| r.sweep.len()).min().unwrap_or(0);
    let sweep = (0..k)
        .map(|i| {
            let pts: Vec<&SweepPoint> = reports.iter().map(|r| &r.sweep[i]).collect();
            let rho: Option<Vec<f64>> = pts.iter().map(|p| p.rho_pred).collect();
            let min_retained = pts.iter().map(|p| p.n_retained).min().unwrap_or(0);
            PooledSweepPoint {
                level: reports[0].sweep_levels[i],
                threshold: pts.iter().map(|p| p.threshold).sum::<f64>() / pts.len() as f64,
                rho_pred: rho.map(|v| v.iter().sum::<f64>() / v.len() as f64),
                min_retained,
                reliable: min_retained >= MIN_RELIABLE && pts.iter().all(|p| p.reliable),
            }
        })
        .collect();
    let additivity: Vec<f64> = reports.iter().map(|r| r.additivity.worst_median()).collect();
    Ok(PooledReport {
        seeds: seeds.to_vec(),
        channels,
        ece_raw: SeedSummary::of(&ece_raw),
        ece_conformal: ece_conf.as_deref().and_then(SeedSummary::of),
        curve_raw: mean_curve(&raw_curves),
        curve_conformal: conf_curves.map(|c| mean_curve(&c)),
        sweep,
        additivity_median: SeedSummary::of(&additivity),
        ensemble_rho: pool_optional(reports.iter().map(|r| r.ensemble_rho.as_ref()).collect(), alpha)?,
    })
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "degenerate".into())
}

fn ci_cells(ci: Option<&BootstrapCi>) -> [String; 3] {
    [
        fmt(ci.map(|c| c.estimate)),
        fmt(ci.map(|c| c.lo)),
        fmt(ci.map(|c| c.hi)),
    ]
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<report csv>", e))
}

/// Error-correlation table: one row per labelled report, ρ with CI per channel.
pub fn write_correlation_table<W: Write>(out: W, rows: &[(&str, &PooledReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["generator".to_string()];
    for c in Channel::ALL {
        for s in ["", "_lo", "_hi"] {
            header.push(format!("rho_{}{s}", c.as_str()));
        }
    }
    w.write_record(&header)?;
    for (label, r) in rows {
        let mut rec = vec![label.to_string()];
        for c in Channel::ALL {
            rec.extend(ci_cells(r.channel(c).rho.as_ref()));
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

/// MC-Dropout ρ_tot against the deterministic-ensemble ρ.
pub fn write_ensemble_table<W: Write>(out: W, rows: &[(&str, &PooledReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "generator", "mc_rho_tot", "mc_rho_tot_lo", "mc_rho_tot_hi", "ensemble_rho", "ensemble_rho_lo",
        "ensemble_rho_hi",
    ])?;
    for (label, r) in rows {
        let mut rec = vec![label.to_string()];
        rec.extend(ci_cells(r.channel(Channel::Tot).rho.as_ref()));
        rec.extend(ci_cells(r.ensemble_rho.as_ref()));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Shift table: one row per (metric, channel), estimate and CI per condition.
pub fn write_shift_table<W: Write>(out: W, conditions: &[(&str, &PooledReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["metric".to_string(), "channel".to_string()];
    for (label, _) in conditions {
        header.extend([label.to_string(), format!("{label}_lo"), format!("{label}_hi")]);
    }
    w.write_record(&header)?;
    type Getter = fn(&PooledChannel) -> Option<&BootstrapCi>;
    let metrics: [(&str, Getter); 3] = [
        ("delta_sigma2", |m| m.delta_sigma.as_ref()),
        ("roc_auc", |m| m.auc.as_ref()),
        ("rho", |m| m.rho.as_ref()),
    ];
    for (name, get) in metrics {
        for c in Channel::ALL {
            let mut rec = vec![name.to_string(), c.as_str().to_string()];
            for (_, r) in conditions {
                rec.extend(ci_cells(get(r.channel(c))));
            }
            w.write_record(&rec)?;
        }
    }
    let mut rec = vec!["ece_raw".to_string(), "tot".to_string()];
    for (_, r) in conditions {
        let s = r.ece_raw;
        rec.extend([fmt(s.map(|s| s.mean)), fmt(s.map(|s| s.min)), fmt(s.map(|s| s.max))]);
    }
    w.write_record(&rec)?;
    finish(w)
}

/// Plot-ready reliability data: `x` nominal, `y` empirical coverage.
pub fn write_reliability_csv<W: Write>(out: W, rows: &[(&str, &PooledReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "series"])?;
    for (label, r) in rows {
        let mut write = |curve: &[CurvePoint], suffix: &str| -> Result<()> {
            for p in curve {
                w.write_record([p.nominal.to_string(), p.empirical.to_string(), format!("{label}_{suffix}")])?;
            }
            Ok(())
        };
        write(&r.curve_raw, "raw")?;
        if let Some(c) = &r.curve_conformal {
            write(c, "conformal")?;
        }
    }
    finish(w)
}

/// Plot-ready sweep data: `x` threshold, `y` ρ_pred on retained units.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[(&str, &PooledReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "series", "level", "n_retained", "reliable"])?;
    for (label, r) in rows {
        for p in &r.sweep {
            w.write_record([
                p.threshold.to_string(),
                fmt(p.rho_pred),
                label.to_string(),
                p.level.to_string(),
                p.min_retained.to_string(),
                p.reliable.to_string(),
            ])?;
        }
    }
    finish(w)
}
