//! Closed-form synthetic generators with sampling and noise shift.
//!
//! Covariates are `x1, x2 ~ Uniform(-2, 2)`. Under sampling shift the
//! training rows are restricted by rejection to `x1 + x2 < s` while test
//! rows stay unrestricted, so part of the test square has no training
//! support. Under noise shift the outcome noise doubles for test rows with
//! `x1 + x2 >= s`. Treatment is a fair coin independent of `x`.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::{Matrix, RngStream};
use crate::twin::{GroundTruth, LabeledDataset};
use crate::{Error, Result};

pub const COVARIATE_LOW: f64 = -2.0;
pub const COVARIATE_HIGH: f64 = 2.0;
pub const TEST_FRACTION: f64 = 0.2;
pub const OOD_NEIGHBORS: usize = 10;
pub const OOD_QUANTILE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthVersion {
    V1,
    V2,
    V3,
}

impl SynthVersion {
    pub const ALL: [SynthVersion; 3] = [SynthVersion::V1, SynthVersion::V2, SynthVersion::V3];

    /// Strong shift for v1 and v2, mild for v3.
    pub fn default_strength(self) -> ShiftStrength {
        match self {
            SynthVersion::V1 | SynthVersion::V2 => ShiftStrength::Strong,
            SynthVersion::V3 => ShiftStrength::Mild,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SynthVersion::V1 => "v1",
            SynthVersion::V2 => "v2",
            SynthVersion::V3 => "v3",
        }
    }
}

impl std::str::FromStr for SynthVersion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(SynthVersion::V1),
            "v2" => Ok(SynthVersion::V2),
            "v3" => Ok(SynthVersion::V3),
            other => Err(Error::InvalidConfig(format!("unknown generator version `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    None,
    SamplingShift,
    NoiseShift,
    Both,
}

impl ShiftKind {
    fn sampling(self) -> bool {
        matches!(self, ShiftKind::SamplingShift | ShiftKind::Both)
    }

    fn noise(self) -> bool {
        matches!(self, ShiftKind::NoiseShift | ShiftKind::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftStrength {
    Mild,
    Strong,
}

impl ShiftStrength {
    /// Boundary `s` on `x1 + x2`.
    pub fn threshold(self) -> f64 {
        match self {
            ShiftStrength::Strong => 0.0,
            ShiftStrength::Mild => 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub version: SynthVersion,
    pub n: usize,
    pub noise_sd: f64,
    pub shift: ShiftKind,
    /// `None` picks the version's default strength.
    pub strength: Option<ShiftStrength>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            version: SynthVersion::V1,
            n: 1000,
            noise_sd: 0.1,
            shift: ShiftKind::Both,
            strength: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        Ok(())
    }

    pub fn resolved_strength(&self) -> ShiftStrength {
        self.strength.unwrap_or_else(|| self.version.default_strength())
    }

    pub fn n_test(&self) -> usize {
        (TEST_FRACTION * self.n as f64).round() as usize
    }
}

/// Noiseless base outcome `y0(x)` and effect `τ(x)`.
pub fn ground_truth(version: SynthVersion, x1: f64, x2: f64) -> (f64, f64) {
    use std::f64::consts::PI;
    match version {
        SynthVersion::V1 => ((PI * x1 * x2).sin(), 1.5 + 0.5 * x1),
        SynthVersion::V2 => ((x1 * x1 + x2 * x2) / 2.0, 2.0 + x1 * x2),
        SynthVersion::V3 => (x1.sin() + x2.cos() + 0.3 * x1 * x2, 1.0 + (x1 + x2).sin()),
    }
}

/// Train and test rows plus their positions in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplit {
    pub config: SynthConfig,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Generation index of every train row.
    pub train_index: Vec<usize>,
    /// Generation index of every test row.
    pub test_index: Vec<usize>,
}

struct Row {
    x1: f64,
    x2: f64,
    t: u8,
    y0: f64,
    y1: f64,
}

fn draw_row(cfg: &SynthConfig, is_test: bool, rng: &mut RngStream, noise: &Normal<f64>) -> Row {
    let s = cfg.resolved_strength().threshold();
    let width = COVARIATE_HIGH - COVARIATE_LOW;
    let (x1, x2) = loop {
        let x1 = COVARIATE_LOW + width * rng.uniform();
        let x2 = COVARIATE_LOW + width * rng.uniform();
        if is_test || !cfg.shift.sampling() || x1 + x2 < s {
            break (x1, x2);
        }
    };
    let scale = if is_test && cfg.shift.noise() && x1 + x2 >= s { 2.0 } else { 1.0 };
    let eps = scale * noise.sample(rng);
    let t = u8::from(rng.bernoulli(0.5));
    let (base, tau) = ground_truth(cfg.version, x1, x2);
    let y0 = base + eps;
    Row {
        x1,
        x2,
        t,
        y0,
        y1: y0 + tau,
    }
}

fn assemble(rows: &[&Row]) -> Result<LabeledDataset> {
    let x = Matrix::from_vec(rows.len(), 2, rows.iter().flat_map(|r| [r.x1, r.x2]).collect())?;
    let t: Vec<u8> = rows.iter().map(|r| r.t).collect();
    let y0: Vec<f64> = rows.iter().map(|r| r.y0).collect();
    let y1: Vec<f64> = rows.iter().map(|r| r.y1).collect();
    let y = rows.iter().map(|r| if r.t == 1 { r.y1 } else { r.y0 }).collect();
    LabeledDataset::new(x, t, y)?.with_truth(GroundTruth::from_potential_outcomes(y0, y1))
}

/// Draws `n` rows and splits them 80/20.
///
/// Test rows get 10-NN OOD flags against the training rows when there are
/// at least 10 of them.
pub fn generate(cfg: &SynthConfig) -> Result<SynthSplit> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed);
    let n_test = cfg.n_test();
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.shuffle(&mut rng);
    let mut is_test = vec![false; cfg.n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let rows: Vec<Row> = (0..cfg.n).map(|i| draw_row(cfg, is_test[i], &mut rng, &noise)).collect();

    let train_index: Vec<usize> = (0..cfg.n).filter(|&i| !is_test[i]).collect();
    let test_index: Vec<usize> = (0..cfg.n).filter(|&i| is_test[i]).collect();
    let train = assemble(&train_index.iter().map(|&i| &rows[i]).collect::<Vec<_>>())?;
    let mut test = assemble(&test_index.iter().map(|&i| &rows[i]).collect::<Vec<_>>())?;
    if train.len() >= OOD_NEIGHBORS && !test.is_empty() {
        test.ood = Some(ood_flags(&train.x, &test.x, OOD_NEIGHBORS, OOD_QUANTILE)?);
    }
    Ok(SynthSplit {
        config: cfg.clone(),
        train,
        test,
        train_index,
        test_index,
    })
}

/// Extra i.i.d. draws from the test distribution, e.g. for a calibration fold.
pub fn sample_test_pool(cfg: &SynthConfig, m: usize, seed: u64) -> Result<LabeledDataset> {
    cfg.validate()?;
    let mut rng = RngStream::new(seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let rows: Vec<Row> = (0..m).map(|_| draw_row(cfg, true, &mut rng, &noise)).collect();
    assemble(&rows.iter().collect::<Vec<_>>())
}

/// Mean Euclidean distance from each test row to its `k` nearest training rows.
pub fn knn_scores(train: &Matrix, test: &Matrix, k: usize) -> Result<Vec<f64>> {
    if train.rows() == 0 {
        return Err(Error::Empty("training set for k-NN"));
    }
    if k == 0 || k > train.rows() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            train.rows()
        )));
    }
    if train.cols() != test.cols() {
        return Err(Error::Shape {
            context: "knn_scores",
            left: train.shape(),
            right: test.shape(),
        });
    }
    let mut dist = vec![0.0; train.rows()];
    Ok((0..test.rows())
        .map(|i| {
            let q = test.row(i);
            for (j, d) in dist.iter_mut().enumerate() {
                *d = q
                    .iter()
                    .zip(train.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            dist.select_nth_unstable_by(k - 1, f64::total_cmp);
            dist[..k].iter().map(|d| d.sqrt()).sum::<f64>() / k as f64
        })
        .collect())
}

/// Flags the `⌈quantile · m⌉` test rows with the largest k-NN score.
///
/// Ties at the cut are resolved in favour of the lower row index.
pub fn ood_flags(train: &Matrix, test: &Matrix, k: usize, quantile: f64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::InvalidArgument(format!("quantile must lie in [0, 1], got {quantile}")));
    }
    let scores = knn_scores(train, test, k)?;
    Ok(flag_top(&scores, quantile))
}

pub(crate) fn flag_top(scores: &[f64], quantile: f64) -> Vec<bool> {
    let m = scores.len();
    let n_flag = ((quantile * m as f64).ceil() as usize).min(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut flags = vec![false; m];
    for &i in &order[..n_flag] {
        flags[i] = true;
    }
    flags
}

pub const DATASET_COLUMNS_TAIL: [&str; 7] = ["t", "y", "y0_true", "y1_true", "tau_true", "split", "ood_flag"];

/// Writes train and test rows in generation order.
pub fn write_dataset_csv<W: Write>(out: W, split: &SynthSplit) -> Result<()> {
    let p = split.train.dim().max(split.test.dim());
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.extend(DATASET_COLUMNS_TAIL.iter().map(|s| s.to_string()));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;

    let mut entries: Vec<(usize, bool, usize)> = split
        .train_index
        .iter()
        .enumerate()
        .map(|(k, &g)| (g, false, k))
        .chain(split.test_index.iter().enumerate().map(|(k, &g)| (g, true, k)))
        .collect();
    entries.sort_by_key(|e| e.0);

    let fmt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for (_, is_test, k) in entries {
        let ds = if is_test { &split.test } else { &split.train };
        let mut rec: Vec<String> = ds.x.row(k).iter().map(|v| v.to_string()).collect();
        rec.push(ds.t[k].to_string());
        rec.push(ds.y[k].to_string());
        let truth = ds.truth.as_ref();
        rec.push(fmt(truth.map(|g| g.y0[k])));
        rec.push(fmt(truth.map(|g| g.y1[k])));
        rec.push(fmt(truth.map(|g| g.tau[k])));
        rec.push(if is_test { "test" } else { "train" }.to_string());
        rec.push(match (&ds.ood, is_test) {
            (Some(o), true) => u8::from(o[k]).to_string(),
            _ => String::new(),
        });
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<dataset csv>", e))?;
    Ok(())
}

/// Reads a dataset CSV back into train and test sets.
///
/// Ground truth is attached when every row carries it; OOD flags when
/// every test row carries one.
pub fn read_dataset_csv(path: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let x_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.len() > 1 && h.starts_with('x') && h[1..].chars().all(|c| c.is_ascii_digit()))
        .map(|(i, _)| i)
        .collect();
    if x_cols.is_empty() {
        return Err(Error::MissingColumn("x1".into()));
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let (ti, yi, si) = (need("t")?, need("y")?, need("split")?);
    let truth_cols = (col("y0_true"), col("y1_true"));
    let ood_col = col("ood_flag");

    #[derive(Default)]
    struct Acc {
        x: Vec<Vec<f64>>,
        t: Vec<u8>,
        y: Vec<f64>,
        y0: Vec<Option<f64>>,
        y1: Vec<Option<f64>>,
        ood: Vec<Option<bool>>,
    }
    let mut parts = [Acc::default(), Acc::default()];
    let num = |s: &str, what: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Data(format!("bad {what} value `{s}`")))
    };
    fn opt(s: Option<&str>) -> Option<&str> {
        s.filter(|v| !v.trim().is_empty())
    }
    for rec in r.records() {
        let rec = rec?;
        let which = match rec.get(si).unwrap_or("") {
            "train" => 0,
            "test" => 1,
            other => return Err(Error::Data(format!("bad split value `{other}`"))),
        };
        let acc = &mut parts[which];
        acc.x.push(
            x_cols
                .iter()
                .map(|&j| num(rec.get(j).unwrap_or(""), "covariate"))
                .collect::<Result<_>>()?,
        );
        acc.t.push(match rec.get(ti).unwrap_or("").trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Data(format!("bad treatment value `{other}`"))),
        });
        acc.y.push(num(rec.get(yi).unwrap_or(""), "outcome")?);
        let tv = |c: Option<usize>| -> Result<Option<f64>> {
            match opt(c.and_then(|c| rec.get(c))) {
                Some(s) => Ok(Some(num(s, "ground truth")?)),
                None => Ok(None),
            }
        };
        acc.y0.push(tv(truth_cols.0)?);
        acc.y1.push(tv(truth_cols.1)?);
        acc.ood.push(match opt(ood_col.and_then(|c| rec.get(c))).map(str::trim) {
            Some("1") => Some(true),
            Some("0") => Some(false),
            Some(other) => return Err(Error::Data(format!("bad ood_flag value `{other}`"))),
            None => None,
        });
    }

    let build = |acc: Acc| -> Result<LabeledDataset> {
        let p = x_cols.len();
        let x = if acc.x.is_empty() {
            Matrix::zeros(0, p)
        } else {
            Matrix::from_rows(&acc.x)?
        };
        let mut ds = LabeledDataset::new(x, acc.t, acc.y)?;
        let y0: Option<Vec<f64>> = acc.y0.into_iter().collect();
        let y1: Option<Vec<f64>> = acc.y1.into_iter().collect();
        if let (Some(y0), Some(y1)) = (y0, y1) {
            if !y0.is_empty() {
                ds = ds.with_truth(GroundTruth::from_potential_outcomes(y0, y1))?;
            }
        }
        let ood: Option<Vec<bool>> = acc.ood.into_iter().collect();
        if let Some(ood) = ood {
            if !ood.is_empty() {
                ds = ds.with_ood(ood)?;
            }
        }
        Ok(ds)
    };
    let [train, test] = parts;
    Ok((build(train)?, build(test)?))
}
