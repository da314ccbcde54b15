//! Real-cohort ingestion, principal components and PC-directed sampling bias.
//!
//! A cohort CSV is read according to a JSON schema naming the treatment and
//! outcome columns. Rows with missing values are dropped, constant
//! covariates are removed and the rest are standardized with population sd
//! on the full table. Training bias keeps each non-test row with
//! probability `max(floor, logistic(-β · score))` on a principal-component
//! score, after an unbiased test fold has been set aside.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::{ood_flags, OOD_NEIGHBORS, OOD_QUANTILE, TEST_FRACTION};
use crate::nn::{Matrix, RngStream};
use crate::twin::{GroundTruth, LabeledDataset};
use crate::{Error, Result};

pub const PC_TOLERANCE: f64 = 1e-10;
pub const PC_MAX_ITERATIONS: usize = 10_000;

/// Column roles in a cohort CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSchema {
    pub treatment: String,
    pub outcome: String,
    /// Covariate include-list. `None` takes every other numeric column.
    #[serde(default)]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub row_id: Option<String>,
    /// Control and treated potential-outcome columns, when known.
    #[serde(default)]
    pub potential_outcomes: Option<[String; 2]>,
}

impl CohortSchema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn reserved(&self) -> Vec<&str> {
        let mut r = vec![self.treatment.as_str(), self.outcome.as_str()];
        r.extend(self.row_id.as_deref());
        if let Some([a, b]) = &self.potential_outcomes {
            r.push(a);
            r.push(b);
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortTable {
    /// Standardized covariates.
    pub covariates: Matrix,
    pub treatment: Vec<u8>,
    pub outcome: Vec<f64>,
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub row_ids: Vec<String>,
    pub truth: Option<GroundTruth>,
    pub dropped_rows: usize,
    pub dropped_columns: Vec<String>,
}

impl CohortTable {
    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        let ds = LabeledDataset::new(self.covariates.clone(), self.treatment.clone(), self.outcome.clone())?;
        match &self.truth {
            Some(t) => ds.with_truth(t.clone()),
            None => Ok(ds),
        }
    }
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan") || f.eq_ignore_ascii_case("null")
}

fn parse_num(field: &str, column: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("column `{column}`: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Data(format!("column `{column}`: non-finite value `{field}`")));
    }
    Ok(v)
}

/// Standardizes columns to zero mean and unit population sd.
///
/// Returns the standardized matrix restricted to non-constant columns, the
/// kept column indices and their means and sds.
pub fn standardize(x: &Matrix) -> (Matrix, Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for j in 0..x.cols() {
        let col = x.col_vec(j);
        let m = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 * (1.0 + m.abs()) {
            kept.push(j);
            means.push(m);
            sds.push(sd);
        }
    }
    let mut out = Matrix::zeros(x.rows(), kept.len());
    for i in 0..x.rows() {
        for (k, &j) in kept.iter().enumerate() {
            out.set(i, k, (x.get(i, j) - means[k]) / sds[k]);
        }
    }
    (out, kept, means, sds)
}

/// Reads and standardizes a cohort CSV.
pub fn load_cohort(path: &Path, schema: &CohortSchema) -> Result<CohortTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(file, schema)
}

pub fn read_cohort<R: std::io::Read>(input: R, schema: &CohortSchema) -> Result<CohortTable> {
    let mut r = csv::Reader::from_reader(input);
    let headers: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ti = find(&schema.treatment)?;
    let yi = find(&schema.outcome)?;
    let idi = schema.row_id.as_deref().map(find).transpose()?;
    let poi = match &schema.potential_outcomes {
        Some([a, b]) => Some((find(a)?, find(b)?)),
        None => None,
    };
    let cov_names: Vec<String> = match &schema.covariates {
        Some(list) => list.clone(),
        None => {
            let reserved = schema.reserved();
            headers.iter().filter(|h| !reserved.contains(&h.as_str())).cloned().collect()
        }
    };
    if cov_names.is_empty() {
        return Err(Error::InvalidConfig("schema selects no covariates".into()));
    }
    let ci: Vec<usize> = cov_names.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let mut raw = Vec::new();
    let (mut t, mut y, mut ids, mut y0, mut y1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut dropped_rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let mut needed: Vec<usize> = ci.clone();
        needed.extend([ti, yi]);
        if let Some((a, b)) = poi {
            needed.extend([a, b]);
        }
        if needed.iter().any(|&j| is_missing(field(j))) {
            dropped_rows += 1;
            continue;
        }
        for (&j, name) in ci.iter().zip(&cov_names) {
            raw.push(parse_num(field(j), name)?);
        }
        t.push(match parse_num(field(ti), &schema.treatment)? {
            v if v == 0.0 => 0,
            v if v == 1.0 => 1,
            v => return Err(Error::Data(format!("treatment must be 0 or 1, got {v}"))),
        });
        y.push(parse_num(field(yi), &schema.outcome)?);
        ids.push(match idi {
            Some(j) => field(j).trim().to_string(),
            None => line.to_string(),
        });
        if let Some((a, b)) = poi {
            y0.push(parse_num(field(a), &headers[a])?);
            y1.push(parse_num(field(b), &headers[b])?);
        }
    }
    if dropped_rows > 0 {
        log::info!("dropped {dropped_rows} rows with missing values");
    }
    if y.len() < 2 {
        return Err(Error::Data(format!("cohort has {} complete rows, need at least 2", y.len())));
    }
    let x = Matrix::from_vec(y.len(), ci.len(), raw)?;
    let (covariates, kept, means, sds) = standardize(&x);
    let dropped_columns: Vec<String> = (0..cov_names.len())
        .filter(|j| !kept.contains(j))
        .map(|j| cov_names[j].clone())
        .collect();
    for c in &dropped_columns {
        log::warn!("dropping constant covariate `{c}`");
    }
    if kept.is_empty() {
        return Err(Error::Data("every covariate is constant".into()));
    }
    Ok(CohortTable {
        covariates,
        treatment: t,
        outcome: y,
        columns: kept.iter().map(|&j| cov_names[j].clone()).collect(),
        means,
        sds,
        row_ids: ids,
        truth: poi.map(|_| GroundTruth::from_potential_outcomes(y0, y1)),
        dropped_rows,
        dropped_columns,
    })
}

/// A principal direction and the row projections onto it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalComponent {
    pub direction: Vec<f64>,
    pub scores: Vec<f64>,
    /// Covariance eigenvalue (population convention).
    pub eigenvalue: f64,
    pub iterations: usize,
}

/// Population covariance of column-centred data.
fn covariance(x: &Matrix) -> Matrix {
    let n = x.rows() as f64;
    let p = x.cols();
    let means: Vec<f64> = x.col_sums().iter().map(|s| s / n).collect();
    let mut c = x.clone();
    for i in 0..c.rows() {
        for (v, m) in c.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let mut cov = c.t_matmul(&c).expect("square by construction");
    for v in cov.as_mut_slice() {
        *v /= n;
    }
    debug_assert_eq!(cov.shape(), (p, p));
    cov
}

fn mat_vec(a: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|i| a.row(i).iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Top eigenpair of a symmetric PSD matrix by power iteration.
///
/// Converged once the eigen-residual `‖Cv − λv‖` falls below
/// `tol · max(λ, 1)`.
fn power_iteration(c: &Matrix) -> Result<(Vec<f64>, f64, usize)> {
    let p = c.rows();
    // Start from the largest-norm column, which cannot be orthogonal to the
    // top eigenvector unless C is zero.
    let start = (0..p)
        .max_by(|&a, &b| norm(&c.col_vec(a)).total_cmp(&norm(&c.col_vec(b))))
        .unwrap_or(0);
    let mut v = c.col_vec(start);
    let n0 = norm(&v);
    if n0 == 0.0 {
        let mut e = vec![0.0; p];
        e[0] = 1.0;
        return Ok((e, 0.0, 0));
    }
    v.iter_mut().for_each(|x| *x /= n0);
    let mut residual = f64::INFINITY;
    for it in 1..=PC_MAX_ITERATIONS {
        let w = mat_vec(c, &v);
        let lambda: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        residual = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= PC_TOLERANCE * lambda.max(1.0) {
            return Ok((v, lambda, it));
        }
        let nw = norm(&w);
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Err(Error::NonConvergence {
        iterations: PC_MAX_ITERATIONS,
        achieved: residual,
    })
}

/// The first `k` principal components, extracted by deflation.
pub fn principal_components(x: &Matrix, k: usize) -> Result<Vec<PrincipalComponent>> {
    if x.rows() < 2 || x.cols() == 0 {
        return Err(Error::InvalidArgument(format!(
            "principal components need n >= 2 and p >= 1, got {:?}",
            x.shape()
        )));
    }
    if k == 0 || k > x.cols() {
        return Err(Error::InvalidArgument(format!("component count {k} outside 1..={}", x.cols())));
    }
    let mut c = covariance(x);
    let p = x.cols();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let (mut v, lambda, iterations) = power_iteration(&c)?;
        let lead = (0..p).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..p {
            for j in 0..p {
                let d = c.get(i, j) - lambda * v[i] * v[j];
                c.set(i, j, d);
            }
        }
        out.push(PrincipalComponent {
            scores: mat_vec(x, &v),
            direction: v,
            eigenvalue: lambda,
            iterations,
        });
    }
    Ok(out)
}

/// First principal component.
pub fn pc1(x: &Matrix) -> Result<PrincipalComponent> {
    Ok(principal_components(x, 1)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasConfig {
    /// 1-based principal component driving the bias.
    pub component_index: usize,
    pub strength: f64,
    pub keep_prob_floor: f64,
    pub test_fraction: f64,
    pub min_train: usize,
    pub seed: u64,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            component_index: 1,
            strength: 2.0,
            keep_prob_floor: 0.02,
            test_fraction: TEST_FRACTION,
            min_train: 100,
            seed: 0,
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.component_index == 0 {
            return Err(Error::InvalidConfig("component_index is 1-based".into()));
        }
        if !self.strength.is_finite() {
            return Err(Error::InvalidConfig("bias strength must be finite".into()));
        }
        if !(self.keep_prob_floor > 0.0 && self.keep_prob_floor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "keep_prob_floor must lie in (0, 1], got {}",
                self.keep_prob_floor
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    pub fn keep_probability(&self, score: f64) -> f64 {
        let logistic = 1.0 / (1.0 + (self.strength * score).exp());
        logistic.max(self.keep_prob_floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowRole {
    Train,
    Test,
    /// Eligible for training but rejected by the bias rule.
    Excluded,
}

impl RowRole {
    pub fn as_str(self) -> &'static str {
        match self {
            RowRole::Train => "train",
            RowRole::Test => "test",
            RowRole::Excluded => "excluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub row_id: String,
    pub kept: bool,
    pub pc_score: f64,
    pub role: RowRole,
    pub ood_flag: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct BiasedSplit {
    pub train: LabeledDataset,
    /// Test rows carry OOD flags against the biased training set.
    pub test: LabeledDataset,
    pub train_index: Vec<usize>,
    pub test_index: Vec<usize>,
    pub component: PrincipalComponent,
    pub manifest: Vec<ManifestRow>,
}

/// Sets aside an unbiased test fold, then subsamples training rows by the
/// PC keep rule and flags low-density test rows.
pub fn induce_bias(table: &CohortTable, cfg: &BiasConfig) -> Result<BiasedSplit> {
    cfg.validate()?;
    let n = table.len();
    let comps = principal_components(&table.covariates, cfg.component_index)?;
    let component = comps.into_iter().last().expect("at least one component");
    let mut rng = RngStream::new(cfg.seed);
    let n_test = (cfg.test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let mut role = vec![RowRole::Test; n];
    for i in 0..n {
        if !is_test[i] {
            let keep = rng.uniform() < cfg.keep_probability(component.scores[i]);
            role[i] = if keep { RowRole::Train } else { RowRole::Excluded };
        }
    }
    let train_index: Vec<usize> = (0..n).filter(|&i| role[i] == RowRole::Train).collect();
    let test_index: Vec<usize> = (0..n).filter(|&i| role[i] == RowRole::Test).collect();
    if train_index.len() < cfg.min_train.max(OOD_NEIGHBORS) {
        return Err(Error::TooFewRows {
            kept: train_index.len(),
            minimum: cfg.min_train.max(OOD_NEIGHBORS),
        });
    }
    if test_index.is_empty() {
        return Err(Error::Empty("test fold"));
    }
    let full = table.to_dataset()?;
    let train = full.subset(&train_index);
    let test = full.subset(&test_index);
    let flags = ood_flags(&train.x, &test.x, OOD_NEIGHBORS, OOD_QUANTILE)?;
    let mut flag_of = vec![None; n];
    for (&i, &f) in test_index.iter().zip(&flags) {
        flag_of[i] = Some(f);
    }
    let manifest = (0..n)
        .map(|i| ManifestRow {
            row_id: table.row_ids[i].clone(),
            kept: role[i] == RowRole::Train,
            pc_score: component.scores[i],
            role: role[i],
            ood_flag: flag_of[i],
        })
        .collect();
    Ok(BiasedSplit {
        train,
        test: test.with_ood(flags)?,
        train_index,
        test_index,
        component,
        manifest,
    })
}

pub const MANIFEST_COLUMNS: [&str; 5] = ["row_id", "kept", "pc1_score", "split", "ood_flag"];

pub fn write_manifest_csv<W: Write>(out: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.row_id.clone(),
            u8::from(r.kept).to_string(),
            r.pc_score.to_string(),
            r.role.as_str().to_string(),
            r.ood_flag.map(|f| u8::from(f).to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))?;
    Ok(())
}

/// Settings for the generated stand-in cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StandinConfig {
    pub n: usize,
    pub covariates: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for StandinConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            covariates: 8,
            noise_sd: 0.1,
            seed: 2024,
        }
    }
}

/// Schema matching [`write_standin_csv`].
pub fn standin_schema() -> CohortSchema {
    CohortSchema {
        treatment: "t".into(),
        outcome: "y".into(),
        covariates: None,
        row_id: Some("row_id".into()),
        potential_outcomes: Some(["y0".into(), "y1".into()]),
    }
}

/// Semi-synthetic cohort: covariates share one latent factor, so they are
/// correlated and have a dominant principal direction. Treatment is a fair
/// coin and the outcome noise is homoscedastic.
pub fn write_standin_csv<W: Write>(out: W, cfg: &StandinConfig) -> Result<()> {
    if cfg.n < 2 || cfg.covariates < 4 || !(cfg.noise_sd >= 0.0) {
        return Err(Error::InvalidConfig("stand-in cohort needs n >= 2, >= 4 covariates, noise_sd >= 0".into()));
    }
    let p = cfg.covariates;
    let mut rng = RngStream::new(cfg.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let loadings: Vec<f64> = (0..p).map(|j| 0.9 - 0.4 * j as f64 / (p - 1) as f64).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["row_id".to_string()];
    header.extend((1..=p).map(|j| format!("x{j}")));
    header.extend(["t", "y", "y0", "y1"].map(String::from));
    w.write_record(&header)?;
    for i in 0..cfg.n {
        let u: f64 = std.sample(&mut rng);
        let x: Vec<f64> = loadings
            .iter()
            .map(|&a| a * u + (1.0 - a * a).sqrt() * std.sample(&mut rng))
            .collect();
        let y0 = (1.5 * x[0]).sin() + 0.5 * x[1] * x[2] + 0.3 * x[3];
        let y1 = y0 + 1.0 + 0.5 * x[0] + 0.25 * x[1] * x[1];
        let t = u8::from(rng.uniform() < 0.5);
        let eps = cfg.noise_sd * std.sample(&mut rng);
        let y = if t == 1 { y1 } else { y0 } + eps;
        let mut rec = vec![i.to_string()];
        rec.extend(x.iter().map(|v| format!("{v:.6}")));
        rec.extend([t.to_string(), format!("{y:.6}"), format!("{y0:.6}"), format!("{y1:.6}")]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<stand-in cohort>", e))?;
    Ok(())
}

/// Generates the stand-in cohort and loads it through the ingestion path.
pub fn standin_cohort(cfg: &StandinConfig) -> Result<CohortTable> {
    let mut buf = Vec::new();
    write_standin_csv(&mut buf, cfg)?;
    read_cohort(buf.as_slice(), &standin_schema())
}
