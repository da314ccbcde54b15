//! End-to-end protocols: generate or bias data, train, decompose, score.
//!
//! A suite keeps the data fixed (drawn from the master seed) and repeats
//! training and MC over model seeds `master + i`. Every random stream is
//! derived from those seeds, so a suite is a pure function of its config.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cohort::{induce_bias, BiasConfig, CohortTable};
use crate::datagen::{generate, sample_test_pool, SynthConfig, SynthSplit};
use crate::metrics::{bootstrap_ci, ensemble_baseline, spearman, IntervalSet, DEFAULT_BOOTSTRAP};
use crate::nn::{DropoutSpec, RngStream};
use crate::report::{evaluate, total_mode_targets, pool_reports, Calibration, EvalOptions, EvalReport, PooledReport};
use crate::twin::{train, DropoutMode, LabeledDataset, TrainReport, TwinNet, TwinNetConfig};
use crate::uncertainty::{decompose, single_mode, UncertaintyBreakdown};
use crate::{Error, Result};

/// Stream ids derived from a model seed.
pub const MC_STREAM: u64 = 10;
const CALIBRATION_STREAM: u64 = 11;
pub const EVAL_STREAM: u64 = 12;
/// Keeps ensemble member seeds clear of the MC-Dropout model seeds.
const ENSEMBLE_SEED_OFFSET: u64 = 1_000_000;
/// Calibration pool seed offset from the master seed.
const POOL_SEED_OFFSET: u64 = 7_919;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub model: TwinNetConfig,
    pub mc_samples: usize,
    /// Size of the held-out calibration fold (synthetic only; 0 = cross-fit on test).
    pub calibration_n: usize,
    /// Deterministic-ensemble size (0 disables the baseline).
    pub ensemble_members: usize,
    /// Training dropout for ensemble members (the model's rate by default);
    /// inference is always dropout-free.
    pub ensemble_dropout: f64,
    pub eval: EvalOptions,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        let model = TwinNetConfig::default();
        Self {
            ensemble_dropout: model.dropout.rate(),
            model,
            mc_samples: 1000,
            calibration_n: 1000,
            ensemble_members: 5,
            eval: EvalOptions {
                bootstrap: DEFAULT_BOOTSTRAP,
                ..EvalOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_s: f64,
    pub mc_s: f64,
    pub calibration_s: f64,
    pub ensemble_s: f64,
    pub eval_s: f64,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub net: TwinNet,
    pub train: TrainReport,
    pub breakdown: UncertaintyBreakdown,
    pub report: EvalReport,
    pub timings: Timings,
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub label: String,
    pub runs: Vec<SeedRun>,
    pub pooled: PooledReport,
}

impl SuiteRun {
    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }
}

fn seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Raw intervals of a calibration fold, scored the same way as the test set.
pub fn calibration_intervals(net: &TwinNet, fold: &LabeledDataset, mc_samples: usize, rng: &mut RngStream) -> Result<IntervalSet> {
    let [r0, r1] = single_mode(net, &fold.x, DropoutMode::Total, mc_samples, rng)?;
    Ok(total_mode_targets([&r0.mean, &r1.mean], [&r0.variance, &r1.variance], fold)?.2)
}

/// Spearman ρ of ensemble variance with its own error, bootstrapped.
fn ensemble_rho(
    train_data: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &ProtocolConfig,
    seed: u64,
    rng: &mut RngStream,
) -> Result<Option<crate::metrics::BootstrapCi>> {
    let Some(tau) = test.tau_true() else {
        return Ok(None);
    };
    let member_cfg = TwinNetConfig {
        seed: ENSEMBLE_SEED_OFFSET + seed * cfg.ensemble_members as u64,
        dropout: DropoutSpec::new(cfg.ensemble_dropout)?,
        ..cfg.model.clone()
    };
    let ens = ensemble_baseline(train_data, &test.x, &member_cfg, cfg.ensemble_members)?;
    let err: Vec<f64> = ens.tau_mean.iter().zip(tau).map(|(h, t)| (h - t).abs()).collect();
    let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    match bootstrap_ci(
        err.len(),
        |idx| spearman(&pick(&ens.variance, idx), &pick(&err, idx)),
        cfg.eval.bootstrap,
        cfg.eval.alpha,
        rng,
    ) {
        Ok(ci) => Ok(Some(ci)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// One model seed: train, decompose the test set, score it.
pub fn run_seed(
    train_data: &LabeledDataset,
    test: &LabeledDataset,
    calibration_fold: Option<&LabeledDataset>,
    cfg: &ProtocolConfig,
    seed: u64,
) -> Result<SeedRun> {
    let model = TwinNetConfig {
        input_dim: train_data.dim(),
        seed,
        ..cfg.model.clone()
    };
    let mut timings = Timings::default();
    let t0 = Instant::now();
    let (net, report) = train(train_data, &model)?;
    timings.train_s = seconds(t0);

    let t0 = Instant::now();
    let breakdown = decompose(&net, &test.x, cfg.mc_samples, &mut RngStream::with_stream(seed, MC_STREAM))?;
    timings.mc_s = seconds(t0);

    let t0 = Instant::now();
    let cal_set = match calibration_fold {
        Some(fold) => Some(calibration_intervals(
            &net,
            fold,
            cfg.mc_samples,
            &mut RngStream::with_stream(seed, CALIBRATION_STREAM),
        )?),
        None => None,
    };
    timings.calibration_s = seconds(t0);

    let t0 = Instant::now();
    let calibration = match &cal_set {
        Some(c) => Calibration::Fold(c),
        None => Calibration::SplitTest,
    };
    let mut eval_rng = RngStream::with_stream(seed, EVAL_STREAM);
    let mut eval = evaluate(&breakdown, test, calibration, &cfg.eval, &mut eval_rng)?;
    timings.eval_s = seconds(t0);

    if cfg.ensemble_members > 0 {
        let t0 = Instant::now();
        eval.ensemble_rho = ensemble_rho(train_data, test, cfg, seed, &mut eval_rng.fork())?;
        timings.ensemble_s = seconds(t0);
    }
    log::info!(
        "seed {seed}: train {:.1}s, mc {:.1}s, calibration {:.1}s, ensemble {:.1}s",
        timings.train_s,
        timings.mc_s,
        timings.calibration_s,
        timings.ensemble_s
    );
    Ok(SeedRun {
        seed,
        net,
        train: report,
        breakdown,
        report: eval,
        timings,
    })
}

fn run_seeds(
    label: &str,
    train_data: &LabeledDataset,
    test: &LabeledDataset,
    calibration_fold: Option<&LabeledDataset>,
    cfg: &ProtocolConfig,
    master_seed: u64,
    n_seeds: usize,
) -> Result<SuiteRun> {
    if n_seeds == 0 {
        return Err(Error::InvalidConfig("need at least one seed".into()));
    }
    let runs = (0..n_seeds as u64)
        .map(|i| run_seed(train_data, test, calibration_fold, cfg, master_seed + i))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.report.clone()).collect();
    Ok(SuiteRun {
        label: label.to_string(),
        pooled: pool_reports(&reports, &seeds, cfg.eval.alpha)?,
        runs,
    })
}

/// Synthetic protocol: the split is drawn from `generator.seed`, the
/// calibration fold from the test distribution with a fixed offset seed.
pub fn run_synthetic(generator: &SynthConfig, cfg: &ProtocolConfig, n_seeds: usize) -> Result<(SynthSplit, SuiteRun)> {
    let split = generate(generator)?;
    let fold = if cfg.calibration_n > 0 {
        Some(sample_test_pool(
            generator,
            cfg.calibration_n,
            generator.seed.wrapping_add(POOL_SEED_OFFSET),
        )?)
    } else {
        None
    };
    let suite = run_seeds(
        generator.version.as_str(),
        &split.train,
        &split.test,
        fold.as_ref(),
        cfg,
        generator.seed,
        n_seeds,
    )?;
    Ok((split, suite))
}

/// Cohort protocol under one bias setting; conformal scores are cross-fit on the test fold.
pub fn run_cohort(
    label: &str,
    table: &CohortTable,
    bias: &BiasConfig,
    cfg: &ProtocolConfig,
    n_seeds: usize,
) -> Result<(crate::cohort::BiasedSplit, SuiteRun)> {
    let split = induce_bias(table, bias)?;
    let suite = run_seeds(label, &split.train, &split.test, None, cfg, bias.seed, n_seeds)?;
    Ok((split, suite))
}
