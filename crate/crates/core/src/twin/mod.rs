//! Twin network: a shared encoder feeding one outcome head per treatment arm.
//!
//! Encoder and heads carry independent dropout masks, and [`DropoutMode`]
//! selects which of them are stochastic on a given pass. That switch is
//! what lets the uncertainty estimators attribute variance to the encoder
//! or to the heads.

mod checkpoint;
mod dataset;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, sha256_hex, Checkpoint, CheckpointMeta};
pub use dataset::{GroundTruth, LabeledDataset};
pub use train::{train, TrainReport, Trainer, TwinGradients};

use serde::{Deserialize, Serialize};

use crate::nn::{AdamConfig, DropoutSpec, Matrix, Mlp, RngStream};
use crate::{Error, Result};

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn from_indicator(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treated),
            other => Err(Error::InvalidArgument(format!("treatment arm must be 0 or 1, got {other}"))),
        }
    }
}

/// Which subnetworks sample dropout masks on a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutMode {
    /// Encoder and heads.
    Total,
    /// Encoder only; heads deterministic.
    RepOnly,
    /// Heads only; encoder deterministic.
    PredOnly,
    /// Fully deterministic.
    Off,
}

impl DropoutMode {
    pub fn encoder_stochastic(self) -> bool {
        matches!(self, DropoutMode::Total | DropoutMode::RepOnly)
    }

    pub fn heads_stochastic(self) -> bool {
        matches!(self, DropoutMode::Total | DropoutMode::PredOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DropoutMode::Total => "total",
            DropoutMode::RepOnly => "rep_only",
            DropoutMode::PredOnly => "pred_only",
            DropoutMode::Off => "off",
        }
    }
}

impl std::str::FromStr for DropoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(DropoutMode::Total),
            "rep_only" => Ok(DropoutMode::RepOnly),
            "pred_only" => Ok(DropoutMode::PredOnly),
            "off" => Ok(DropoutMode::Off),
            other => Err(Error::InvalidArgument(format!("unknown dropout mode `{other}`"))),
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinNetConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub dropout: DropoutSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TwinNetConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            latent_dim: 32,
            encoder_hidden: vec![64, 64],
            head_hidden: vec![32],
            dropout: DropoutSpec::new(0.2).expect("valid rate"),
            epochs: 50,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TwinNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig("input_dim and latent_dim must be >= 1".into()));
        }
        if self.encoder_hidden.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinNet {
    pub encoder: Mlp,
    pub head0: Mlp,
    pub head1: Mlp,
    pub config: TwinNetConfig,
}

impl TwinNet {
    /// Freshly initialized network; weights come from stream 0 of `config.seed`.
    pub fn new(config: TwinNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::with_stream(config.seed, 0);
        let encoder = Mlp::init(config.input_dim, &config.encoder_hidden, config.latent_dim, &mut rng)?;
        let head0 = Mlp::init(config.latent_dim, &config.head_hidden, 1, &mut rng)?;
        let head1 = Mlp::init(config.latent_dim, &config.head_hidden, 1, &mut rng)?;
        Ok(Self {
            encoder,
            head0,
            head1,
            config,
        })
    }

    /// Assembles a network from explicit stacks, checking the twin invariants.
    pub fn from_parts(encoder: Mlp, head0: Mlp, head1: Mlp, config: TwinNetConfig) -> Result<Self> {
        let shape = |m: &Mlp| m.layers.iter().map(|l| l.weights.shape()).collect::<Vec<_>>();
        if shape(&head0) != shape(&head1) {
            return Err(Error::InvalidConfig("heads must be identically shaped".into()));
        }
        if encoder.output_dim() != head0.input_dim() || head0.output_dim() != 1 {
            return Err(Error::Shape {
                context: "TwinNet::from_parts",
                left: (encoder.input_dim(), encoder.output_dim()),
                right: (head0.input_dim(), head0.output_dim()),
            });
        }
        Ok(Self {
            encoder,
            head0,
            head1,
            config,
        })
    }

    pub fn head(&self, arm: Arm) -> &Mlp {
        match arm {
            Arm::Control => &self.head0,
            Arm::Treated => &self.head1,
        }
    }

    pub fn head_mut(&mut self, arm: Arm) -> &mut Mlp {
        match arm {
            Arm::Control => &mut self.head0,
            Arm::Treated => &mut self.head1,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn dropout(&self) -> DropoutSpec {
        self.config.dropout
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                context: "TwinNet::forward",
                left: x.shape(),
                right: (self.input_dim(), self.encoder.output_dim()),
            });
        }
        Ok(())
    }

    /// Latent representation Φ(x), masked in the encoder when the mode asks for it.
    pub fn encode(&self, x: &Matrix, mode: DropoutMode, rng: &mut RngStream) -> Result<Matrix> {
        self.check_input(x)?;
        let spec = self.dropout();
        if mode.encoder_stochastic() {
            self.encoder.forward(x, Some((spec, rng)))
        } else {
            self.encoder.forward(x, None)
        }
    }

    /// `f_t(z)` for a latent batch.
    pub fn forward_from_latent(
        &self,
        z: &Matrix,
        arm: Arm,
        mode: DropoutMode,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>> {
        let head = self.head(arm);
        let out = if mode.heads_stochastic() {
            head.forward(z, Some((self.dropout(), rng)))?
        } else {
            head.forward(z, None)?
        };
        Ok(out.into_vec())
    }

    /// One pass of `f_t(Φ(x))` with masks sampled according to `mode`.
    pub fn forward(&self, x: &Matrix, arm: Arm, mode: DropoutMode, rng: &mut RngStream) -> Result<Vec<f64>> {
        let z = self.encode(x, mode, rng)?;
        self.forward_from_latent(&z, arm, mode, rng)
    }

    /// Deterministic point estimate f1(Φ(x)) − f0(Φ(x)).
    pub fn predict_tau(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let z = self.encoder.forward(x, None)?;
        let y0 = self.head0.forward(&z, None)?;
        let y1 = self.head1.forward(&z, None)?;
        Ok(y1
            .as_slice()
            .iter()
            .zip(y0.as_slice())
            .map(|(a, b)| a - b)
            .collect())
    }

    /// Deterministic factual predictions `f_{t_i}(Φ(x_i))`.
    pub fn predict_factual(&self, x: &Matrix, t: &[u8]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let z = self.encoder.forward(x, None)?;
        let y0 = self.head0.forward(&z, None)?;
        let y1 = self.head1.forward(&z, None)?;
        Ok(t.iter()
            .enumerate()
            .map(|(i, &ti)| if ti == 1 { y1.get(i, 0) } else { y0.get(i, 0) })
            .collect())
    }
}
