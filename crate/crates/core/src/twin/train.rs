//! Factual-MSE training.
//!
//! Each unit contributes only through the head matching its observed
//! treatment. A head whose arm is absent from a mini-batch gets no
//! gradient at all and is skipped by the optimizer for that step.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, TwinNet, TwinNetConfig};
use crate::nn::{AdamState, Matrix, MlpGradients, RngStream};
use crate::{Error, Result};

/// Gradients of the factual loss.
#[derive(Debug, Clone)]
pub struct TwinGradients {
    pub loss: f64,
    pub encoder: MlpGradients,
    /// `None` when no unit in the batch has `t = 0`.
    pub head0: Option<MlpGradients>,
    /// `None` when no unit in the batch has `t = 1`.
    pub head1: Option<MlpGradients>,
}

/// Loss history for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean factual loss per epoch, measured on the dropout-active passes.
    pub epoch_losses: Vec<f64>,
    /// Deterministic factual MSE before the first update.
    pub initial_mse: f64,
    /// Deterministic factual MSE after the last update.
    pub final_mse: f64,
}

impl TwinNet {
    /// Factual MSE and its gradients on a batch.
    ///
    /// With `dropout_rng` set, masks are sampled in encoder and heads as in
    /// training; otherwise the pass is deterministic.
    pub fn factual_gradients(
        &self,
        x: &Matrix,
        t: &[u8],
        y: &[f64],
        dropout_rng: Option<&mut RngStream>,
    ) -> Result<TwinGradients> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::Empty("training batch"));
        }
        if t.len() != n || y.len() != n {
            return Err(Error::Shape {
                context: "factual_gradients",
                left: (n, x.cols()),
                right: (t.len(), y.len()),
            });
        }
        let spec = self.dropout();
        let mut rng = dropout_rng;

        let enc = self
            .encoder
            .forward_cached(x, rng.as_deref_mut().map(|r| (spec, r)))?;
        let z = enc.output();
        let mut d_z = Matrix::zeros(n, z.cols());
        let mut sse = 0.0;
        let mut head_grads = [None, None];

        for (arm, slot) in head_grads.iter_mut().enumerate() {
            let rows: Vec<usize> = (0..n).filter(|&i| usize::from(t[i]) == arm).collect();
            if rows.is_empty() {
                continue;
            }
            let head = if arm == 0 { &self.head0 } else { &self.head1 };
            let z_arm = z.select_rows(&rows);
            let cache = head.forward_cached(&z_arm, rng.as_deref_mut().map(|r| (spec, r)))?;
            let pred = cache.output();
            let mut d_out = Matrix::zeros(rows.len(), 1);
            for (k, &i) in rows.iter().enumerate() {
                let r = pred.get(k, 0) - y[i];
                sse += r * r;
                d_out.set(k, 0, 2.0 * r / n as f64);
            }
            let (g, d_in) = head.backward(&cache, &d_out)?;
            for (k, &i) in rows.iter().enumerate() {
                d_z.row_mut(i).copy_from_slice(d_in.row(k));
            }
            *slot = Some(g);
        }

        let (encoder, _) = self.encoder.backward(&enc, &d_z)?;
        let [head0, head1] = head_grads;
        Ok(TwinGradients {
            loss: sse / n as f64,
            encoder,
            head0,
            head1,
        })
    }

    /// Deterministic factual MSE over a dataset.
    pub fn factual_mse(&self, data: &LabeledDataset) -> Result<f64> {
        let pred = self.predict_factual(&data.x, &data.t)?;
        let n = data.len().max(1) as f64;
        Ok(pred
            .iter()
            .zip(&data.y)
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>()
            / n)
    }

    fn tensor_lengths(&self) -> Vec<usize> {
        [&self.encoder, &self.head0, &self.head1]
            .iter()
            .flat_map(|m| m.tensors().into_iter().map(<[f64]>::len))
            .collect()
    }
}

/// Owns a network together with its optimizer and random streams.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: TwinNet,
    pub adam: AdamState,
    shuffle_rng: RngStream,
    dropout_rng: RngStream,
}

impl Trainer {
    /// Streams 1 and 2 of the config seed drive shuffling and dropout.
    pub fn new(net: TwinNet) -> Self {
        let seed = net.config.seed;
        let adam = AdamState::new(net.config.adam, &net.tensor_lengths());
        Self {
            net,
            adam,
            shuffle_rng: RngStream::with_stream(seed, 1),
            dropout_rng: RngStream::with_stream(seed, 2),
        }
    }

    /// One Adam update on a mini-batch; returns the batch loss.
    pub fn step(&mut self, x: &Matrix, t: &[u8], y: &[f64]) -> Result<f64> {
        let grads = self
            .net
            .factual_gradients(x, t, y, Some(&mut self.dropout_rng))?;
        let TwinGradients {
            loss,
            encoder,
            head0,
            head1,
        } = grads;

        let mut grad_views: Vec<Option<&[f64]>> = encoder.tensors().into_iter().map(Some).collect();
        for (head, g) in [(&self.net.head0, &head0), (&self.net.head1, &head1)] {
            match g {
                Some(g) => grad_views.extend(g.tensors().into_iter().map(Some)),
                None => grad_views.extend(std::iter::repeat_n(None, head.layers.len() * 2)),
            }
        }
        let net = &mut self.net;
        let mut params: Vec<&mut [f64]> = net.encoder.tensors_mut();
        params.extend(net.head0.tensors_mut());
        params.extend(net.head1.tensors_mut());
        self.adam.step(&mut params, &grad_views)?;
        Ok(loss)
    }

    /// One pass over the data in a freshly shuffled order; returns the mean loss.
    pub fn epoch(&mut self, data: &LabeledDataset) -> Result<f64> {
        let n = data.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.net.config.batch_size) {
            let x = data.x.select_rows(chunk);
            let t: Vec<u8> = chunk.iter().map(|&i| data.t[i]).collect();
            let y: Vec<f64> = chunk.iter().map(|&i| data.y[i]).collect();
            let loss = self.step(&x, &t, &y)?;
            total += loss * chunk.len() as f64;
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        Ok(mean)
    }

    /// Runs `config.epochs` epochs.
    pub fn fit(&mut self, data: &LabeledDataset) -> Result<TrainReport> {
        check_trainable(data, &self.net)?;
        let initial_mse = self.net.factual_mse(data)?;
        let mut epoch_losses = Vec::with_capacity(self.net.config.epochs);
        for _ in 0..self.net.config.epochs {
            epoch_losses.push(self.epoch(data)?);
        }
        let final_mse = self.net.factual_mse(data)?;
        Ok(TrainReport {
            epoch_losses,
            initial_mse,
            final_mse,
        })
    }

    pub fn into_net(self) -> TwinNet {
        self.net
    }
}

fn check_trainable(data: &LabeledDataset, net: &TwinNet) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    data.validate()?;
    data.check_finite()?;
    if data.dim() != net.input_dim() {
        return Err(Error::Shape {
            context: "train",
            left: data.x.shape(),
            right: (net.input_dim(), net.config.latent_dim),
        });
    }
    Ok(())
}

/// Initializes a network from `config` and trains it on `data`.
pub fn train(data: &LabeledDataset, config: &TwinNetConfig) -> Result<(TwinNet, TrainReport)> {
    let net = TwinNet::new(config.clone())?;
    let mut trainer = Trainer::new(net);
    let report = trainer.fit(data)?;
    Ok((trainer.into_net(), report))
}
