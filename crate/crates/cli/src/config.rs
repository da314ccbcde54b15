//! TOML run configuration. Every field has a default, so an empty file is
//! a valid config; the resolved config is written into each run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twindrop::cohort::{BiasConfig, StandinConfig};
use twindrop::datagen::SynthConfig;
use twindrop::experiment::ProtocolConfig;
use twindrop::report::EvalOptions;
use twindrop::twin::TwinNetConfig;
use twindrop::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub samples: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self { samples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub bootstrap: usize,
    pub alpha: f64,
    pub sweep_points: usize,
    /// Δσ² and ROC-AUC are requested, so OOD flags must be present.
    pub shift_metrics: bool,
    pub calibration_n: usize,
    pub ensemble_members: usize,
    pub ensemble_dropout: f64,
    /// Model seeds per suite in `reproduce`.
    pub seeds: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let eval = EvalOptions::default();
        let proto = ProtocolConfig::default();
        Self {
            bootstrap: eval.bootstrap,
            alpha: eval.alpha,
            sweep_points: eval.sweep_points,
            shift_metrics: true,
            calibration_n: proto.calibration_n,
            ensemble_members: proto.ensemble_members,
            ensemble_dropout: proto.ensemble_dropout,
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("twindrop-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSection {
    /// External cohort CSV; the generated stand-in is used when unset.
    pub path: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub standin: StandinConfig,
}

impl Default for CohortSection {
    fn default() -> Self {
        Self {
            path: None,
            schema: None,
            standin: StandinConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Overrides the generator, model and bias seeds.
    pub seed: u64,
    pub generator: SynthConfig,
    pub model: TwinNetConfig,
    pub mc: McSection,
    pub bias: BiasConfig,
    pub cohort: CohortSection,
    pub metrics: MetricsSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: SynthConfig {
                n: 2000,
                ..SynthConfig::default()
            },
            model: TwinNetConfig::default(),
            mc: McSection::default(),
            bias: BiasConfig::default(),
            cohort: CohortSection::default(),
            metrics: MetricsSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides and pushes the master seed down.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(dir) = out {
            self.output.dir = dir;
        }
        self.generator.seed = self.seed;
        self.model.seed = self.seed;
        self.bias.seed = self.seed;
        self.generator.validate()?;
        self.bias.validate()?;
        self.model.adam.validate()?;
        if self.mc.samples < 2 {
            return Err(Error::InvalidConfig("mc.samples must be >= 2".into()));
        }
        if self.metrics.seeds == 0 {
            return Err(Error::InvalidConfig("metrics.seeds must be >= 1".into()));
        }
        Ok(self)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            bootstrap: self.metrics.bootstrap,
            alpha: self.metrics.alpha,
            sweep_points: self.metrics.sweep_points,
            require_ood: self.metrics.shift_metrics,
        }
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            model: self.model.clone(),
            mc_samples: self.mc.samples,
            calibration_n: self.metrics.calibration_n,
            ensemble_members: self.metrics.ensemble_members,
            ensemble_dropout: self.metrics.ensemble_dropout,
            eval: self.eval_options(),
        }
    }
}
