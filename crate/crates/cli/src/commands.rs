//! The five pipeline commands. Each reads its inputs from explicit paths or
//! from the output directory left by the previous stage.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use twindrop::cohort::{
    load_cohort, standin_schema, write_manifest_csv, write_standin_csv, BiasConfig, CohortSchema,
    CohortTable, read_cohort,
};
use twindrop::datagen::{generate, read_dataset_csv, write_dataset_csv, SynthConfig, SynthVersion};
use twindrop::experiment::{run_cohort, run_synthetic, ProtocolConfig, SuiteRun, EVAL_STREAM, MC_STREAM};
use twindrop::nn::RngStream;
use twindrop::report::{
    evaluate, pool_reports, write_correlation_table, write_ensemble_table, write_reliability_csv, write_shift_table,
    write_sweep_csv, Calibration, PooledReport,
};
use twindrop::twin::{load_checkpoint, save_checkpoint, train, Checkpoint, CheckpointMeta, DropoutMode, TwinNetConfig};
use twindrop::uncertainty::{decompose, single_mode, write_breakdown_csv, write_single_mode_csv};
use twindrop::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::{file_sha256, io_error, RunManifest};

pub const DATASET_FILE: &str = "dataset.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const BREAKDOWN_FILE: &str = "breakdown.csv";
pub const REPORT_FILE: &str = "report.json";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

/// Writes through `f` and records the file as an artifact.
fn emit<F>(manifest: &mut RunManifest, path: &Path, f: F) -> Result<()>
where
    F: FnOnce(BufWriter<File>) -> Result<()>,
{
    f(create(path)?)?;
    manifest.artifact(path)
}

fn or_default(path: Option<PathBuf>, cfg: &RunConfig, name: &str) -> PathBuf {
    path.unwrap_or_else(|| cfg.output.dir.join(name))
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<()> {
    let mut manifest = RunManifest::new("gen", cfg);
    ensure_dir(&cfg.output.dir)?;
    let t0 = Instant::now();
    let split = generate(&cfg.generator)?;
    let path = cfg.output.dir.join(DATASET_FILE);
    emit(&mut manifest, &path, |w| write_dataset_csv(w, &split))?;
    manifest.seeds = vec![cfg.generator.seed];
    manifest.time("gen", t0.elapsed().as_secs_f64());
    log::info!(
        "wrote {} ({} train, {} test rows)",
        path.display(),
        split.train.len(),
        split.test.len()
    );
    manifest.write()?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, data: Option<PathBuf>) -> Result<()> {
    let data_path = or_default(data, cfg, DATASET_FILE);
    let data_sha = file_sha256(&data_path)?;
    let ckpt_path = cfg.output.dir.join(CHECKPOINT_FILE);
    if ckpt_path.exists() {
        // A corrupt checkpoint is an error, never silently replaced.
        let existing = load_checkpoint(&ckpt_path)?;
        let same_config = existing.model.config
            == TwinNetConfig {
                input_dim: existing.model.config.input_dim,
                ..cfg.model.clone()
            };
        if same_config
            && existing.meta.epochs_completed >= cfg.model.epochs
            && existing.meta.data_sha256.as_deref() == Some(&data_sha)
        {
            log::info!("{} already holds a finished run; nothing to do", ckpt_path.display());
            return Ok(());
        }
        log::info!("existing checkpoint does not match this run; retraining");
    }
    let mut manifest = RunManifest::new("train", cfg);
    manifest.input(&data_path)?;
    ensure_dir(&cfg.output.dir)?;
    let (train_set, _) = read_dataset_csv(&data_path)?;
    let model = TwinNetConfig {
        input_dim: train_set.dim(),
        ..cfg.model.clone()
    };
    let t0 = Instant::now();
    let (net, report) = train(&train_set, &model)?;
    manifest.time("train", t0.elapsed().as_secs_f64());
    log::info!(
        "trained on {} rows: factual MSE {:.5} -> {:.5}",
        train_set.len(),
        report.initial_mse,
        report.final_mse
    );
    let checkpoint = Checkpoint {
        model: net,
        meta: CheckpointMeta {
            epochs_completed: model.epochs,
            data_sha256: Some(data_sha),
            report: Some(report),
        },
    };
    save_checkpoint(&ckpt_path, &checkpoint)?;
    manifest.artifact(&ckpt_path)?;
    manifest.seeds = vec![model.seed];
    manifest.write()?;
    Ok(())
}

pub fn cmd_uncertainty(
    cfg: &RunConfig,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    mode: Option<DropoutMode>,
) -> Result<()> {
    let ckpt_path = or_default(checkpoint, cfg, CHECKPOINT_FILE);
    let data_path = or_default(data, cfg, DATASET_FILE);
    let mut manifest = RunManifest::new("uncertainty", cfg);
    manifest.input(&ckpt_path)?;
    manifest.input(&data_path)?;
    let net = load_checkpoint(&ckpt_path)?.model;
    let (_, test) = read_dataset_csv(&data_path)?;
    ensure_dir(&cfg.output.dir)?;
    let mut rng = RngStream::with_stream(cfg.seed, MC_STREAM);
    let t0 = Instant::now();
    match mode {
        None => {
            let b = decompose(&net, &test.x, cfg.mc.samples, &mut rng)?;
            let path = cfg.output.dir.join(BREAKDOWN_FILE);
            emit(&mut manifest, &path, |w| write_breakdown_csv(w, &b))?;
        }
        Some(m) => {
            let r = single_mode(&net, &test.x, m, cfg.mc.samples, &mut rng)?;
            let path = cfg.output.dir.join(format!("breakdown_{}.csv", m.as_str()));
            emit(&mut manifest, &path, |w| write_single_mode_csv(w, &r))?;
        }
    }
    manifest.time("mc", t0.elapsed().as_secs_f64());
    manifest.seeds = vec![cfg.seed];
    manifest.write()?;
    Ok(())
}

fn table_outputs(
    manifest: &mut RunManifest,
    dir: &Path,
    rows: &[(&str, &PooledReport)],
    with_ensemble: bool,
) -> Result<()> {
    emit(manifest, &dir.join("table_correlation.csv"), |w| write_correlation_table(w, rows))?;
    if with_ensemble {
        emit(manifest, &dir.join("table_ensemble.csv"), |w| write_ensemble_table(w, rows))?;
    }
    emit(manifest, &dir.join("reliability.csv"), |w| write_reliability_csv(w, rows))?;
    emit(manifest, &dir.join("sweep.csv"), |w| write_sweep_csv(w, rows))
}

pub fn cmd_eval(cfg: &RunConfig, breakdown: Option<PathBuf>, data: Option<PathBuf>) -> Result<()> {
    let b_path = or_default(breakdown, cfg, BREAKDOWN_FILE);
    let data_path = or_default(data, cfg, DATASET_FILE);
    let mut manifest = RunManifest::new("eval", cfg);
    manifest.input(&b_path)?;
    manifest.input(&data_path)?;
    let b = twindrop::uncertainty::read_breakdown_csv(&b_path)?;
    let (_, test) = read_dataset_csv(&data_path)?;
    ensure_dir(&cfg.output.dir)?;
    let t0 = Instant::now();
    let mut rng = RngStream::with_stream(cfg.seed, EVAL_STREAM);
    let report = evaluate(&b, &test, Calibration::SplitTest, &cfg.eval_options(), &mut rng)?;
    manifest.time("eval", t0.elapsed().as_secs_f64());
    let path = cfg.output.dir.join(REPORT_FILE);
    write_json(&path, &report)?;
    manifest.artifact(&path)?;
    let pooled = pool_reports(std::slice::from_ref(&report), &[cfg.seed], cfg.metrics.alpha)?;
    table_outputs(&mut manifest, &cfg.output.dir, &[("run", &pooled)], false)?;
    manifest.seeds = vec![cfg.seed];
    manifest.write()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Synthetic,
    TwinsStandin,
    All,
}

fn record_suite(manifest: &mut RunManifest, suite: &SuiteRun) {
    for r in &suite.runs {
        let t = &r.timings;
        for (stage, s) in [
            ("train", t.train_s),
            ("mc", t.mc_s),
            ("calibration", t.calibration_s),
            ("ensemble", t.ensemble_s),
            ("eval", t.eval_s),
        ] {
            manifest.time(&format!("{}/{stage}", suite.label), s);
        }
    }
    for s in suite.seeds() {
        if !manifest.seeds.contains(&s) {
            manifest.seeds.push(s);
        }
    }
}

fn reproduce_synthetic(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    let dir = cfg.output.dir.join("synthetic");
    ensure_dir(&dir)?;
    let proto = cfg.protocol();
    let mut suites = Vec::new();
    for version in SynthVersion::ALL {
        let generator = SynthConfig {
            version,
            strength: None,
            ..cfg.generator.clone()
        };
        log::info!("synthetic suite {}: {} seeds", version.as_str(), cfg.metrics.seeds);
        let (split, suite) = run_synthetic(&generator, &proto, cfg.metrics.seeds)?;
        emit(manifest, &dir.join(format!("dataset_{}.csv", version.as_str())), |w| {
            write_dataset_csv(w, &split)
        })?;
        let path = dir.join(format!("report_{}.json", version.as_str()));
        write_json(&path, &suite.pooled)?;
        manifest.artifact(&path)?;
        record_suite(manifest, &suite);
        suites.push(suite);
    }
    let rows: Vec<(&str, &PooledReport)> = suites.iter().map(|s| (s.label.as_str(), &s.pooled)).collect();
    table_outputs(manifest, &dir, &rows, true)
}

fn cohort_table(cfg: &RunConfig, dir: &Path, manifest: &mut RunManifest) -> Result<CohortTable> {
    match &cfg.cohort.path {
        Some(path) => {
            let schema = match &cfg.cohort.schema {
                Some(s) => CohortSchema::from_json_file(s)?,
                None => standin_schema(),
            };
            manifest.input(path)?;
            load_cohort(path, &schema)
        }
        None => {
            let path = dir.join("cohort.csv");
            emit(manifest, &path, |w| write_standin_csv(w, &cfg.cohort.standin))?;
            let schema_path = dir.join("schema.json");
            write_json(&schema_path, &standin_schema())?;
            manifest.artifact(&schema_path)?;
            let file = File::open(&path).map_err(|e| io_error(&path, e))?;
            read_cohort(file, &standin_schema())
        }
    }
}

fn reproduce_twins(cfg: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    let dir = cfg.output.dir.join("twins-standin");
    ensure_dir(&dir)?;
    let table = cohort_table(cfg, &dir, manifest)?;
    let proto = ProtocolConfig {
        ensemble_members: 0,
        ..cfg.protocol()
    };
    let conditions = [
        ("no_bias", BiasConfig { strength: 0.0, ..cfg.bias.clone() }),
        ("bias", cfg.bias.clone()),
    ];
    let mut suites = Vec::new();
    for (label, bias) in &conditions {
        log::info!("cohort suite {label}: {} seeds", cfg.metrics.seeds);
        let (split, suite) = run_cohort(label, &table, bias, &proto, cfg.metrics.seeds)?;
        emit(manifest, &dir.join(format!("split_{label}.csv")), |w| {
            write_manifest_csv(w, &split.manifest)
        })?;
        let path = dir.join(format!("report_{label}.json"));
        write_json(&path, &suite.pooled)?;
        manifest.artifact(&path)?;
        record_suite(manifest, &suite);
        suites.push(suite);
    }
    let rows: Vec<(&str, &PooledReport)> = suites.iter().map(|s| (s.label.as_str(), &s.pooled)).collect();
    emit(manifest, &dir.join("table_shift.csv"), |w| write_shift_table(w, &rows))?;
    emit(manifest, &dir.join("reliability.csv"), |w| write_reliability_csv(w, &rows))?;
    emit(manifest, &dir.join("sweep.csv"), |w| write_sweep_csv(w, &rows))
}

pub fn cmd_reproduce(cfg: &RunConfig, suite: Suite) -> Result<()> {
    ensure_dir(&cfg.output.dir)?;
    let mut manifest = RunManifest::new("reproduce", cfg);
    if matches!(suite, Suite::Synthetic | Suite::All) {
        reproduce_synthetic(cfg, &mut manifest)?;
    }
    if matches!(suite, Suite::TwinsStandin | Suite::All) {
        reproduce_twins(cfg, &mut manifest)?;
    }
    manifest.write()?;
    Ok(())
}

/// Maps pipeline errors onto the documented exit codes.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidArgument(_) => 2,
        e if e.is_numerical() => 4,
        _ => 3,
    }
}
