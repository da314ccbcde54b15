//! Shared helpers: tiny hand-built twin nets and exact mask enumeration.

#![allow(dead_code)]

use twindrop::nn::{Activation, DenseLayer, DropoutSpec, Matrix, Mlp};
use twindrop::twin::{Arm, TwinNet, TwinNetConfig};

pub fn layer(weights: &[&[f64]], bias: &[f64], activation: Activation) -> DenseLayer {
    DenseLayer::new(Matrix::from_rows(weights).unwrap(), bias.to_vec(), activation).unwrap()
}

/// 1 → 2 (ReLU, masked) → 1 encoder, 1 → 2 (ReLU, masked) → 1 heads: four
/// dropout units on any arm's path.
pub fn tiny_net(rate: f64) -> TwinNet {
    let encoder = Mlp::new(vec![
        layer(&[&[1.0, -0.7]], &[0.3, 0.9], Activation::Relu),
        layer(&[&[0.8], &[-1.1]], &[0.2], Activation::Identity),
    ])
    .unwrap();
    let head = |w: [f64; 2], b: [f64; 2], out: [f64; 2], c: f64| {
        Mlp::new(vec![
            layer(&[&w], &b, Activation::Relu),
            layer(&[&[out[0]], &[out[1]]], &[c], Activation::Identity),
        ])
        .unwrap()
    };
    let head0 = head([1.3, -0.4], [0.5, 0.8], [0.9, 1.7], -0.1);
    let head1 = head([-0.6, 1.2], [1.0, 0.6], [1.4, -0.5], 0.3);
    net_from(encoder, head0, head1, rate)
}

/// One encoder hidden unit and deterministic-width heads without hidden
/// layers, so only a single unit is ever masked.
pub fn one_unit_net(rate: f64) -> TwinNet {
    let encoder = Mlp::new(vec![
        layer(&[&[1.5]], &[0.5], Activation::Relu),
        layer(&[&[0.7]], &[0.1], Activation::Identity),
    ])
    .unwrap();
    let head = |w: f64, c: f64| Mlp::new(vec![layer(&[&[w]], &[c], Activation::Identity)]).unwrap();
    net_from(encoder, head(2.0, 0.0), head(-1.0, 0.5), rate)
}

pub fn net_from(encoder: Mlp, head0: Mlp, head1: Mlp, rate: f64) -> TwinNet {
    let config = TwinNetConfig {
        input_dim: encoder.input_dim(),
        latent_dim: encoder.output_dim(),
        encoder_hidden: encoder.hidden_widths(),
        head_hidden: head0.hidden_widths(),
        dropout: DropoutSpec::new(rate).unwrap(),
        ..TwinNetConfig::default()
    };
    TwinNet::from_parts(encoder, head0, head1, config).unwrap()
}

/// Every 0/1 keep pattern over `units` entries with its probability.
pub fn patterns(units: usize, rate: f64) -> Vec<(Vec<bool>, f64)> {
    (0..1u32 << units)
        .map(|bits| {
            let keep: Vec<bool> = (0..units).map(|j| bits >> j & 1 == 1).collect();
            let prob = keep.iter().map(|&k| if k { 1.0 - rate } else { rate }).product();
            (keep, prob)
        })
        .collect()
}

/// Splits a flat keep pattern into per-hidden-layer mask matrices for one row.
pub fn masks_for(mlp: &Mlp, keep: &[bool], scale: f64) -> Vec<Option<Matrix>> {
    let mut offset = 0;
    mlp.hidden_widths()
        .iter()
        .map(|&w| {
            let vals = keep[offset..offset + w].iter().map(|&k| if k { scale } else { 0.0 }).collect();
            offset += w;
            Some(Matrix::from_vec(1, w, vals).unwrap())
        })
        .collect()
}

pub fn unmasked(mlp: &Mlp) -> Vec<Option<Matrix>> {
    vec![None; mlp.layers.len() - 1]
}

/// Exact moments of one arm's output at a single input row.
#[derive(Debug, Clone, Copy)]
pub struct Exact {
    pub mean: f64,
    /// Var over all masks.
    pub var_tot: f64,
    /// Var over encoder masks of the head-averaged output.
    pub var_rep: f64,
    /// Mean over encoder masks of the head-mask variance.
    pub var_pred: f64,
    /// Var over encoder masks with the head unmasked (what RepOnly samples).
    pub var_rep_only: f64,
    /// Var over head masks with the encoder unmasked (what PredOnly samples).
    pub var_pred_only: f64,
    /// Fourth central moment of the fully stochastic output.
    pub mu4_tot: f64,
}

fn moments(values: &[(f64, f64)]) -> (f64, f64, f64) {
    let mean: f64 = values.iter().map(|(v, p)| v * p).sum();
    let var = values.iter().map(|(v, p)| p * (v - mean).powi(2)).sum();
    let mu4 = values.iter().map(|(v, p)| p * (v - mean).powi(4)).sum();
    (mean, var, mu4)
}

pub fn enumerate(net: &TwinNet, x: &[f64], arm: Arm) -> Exact {
    let rate = net.dropout().rate();
    let scale = net.dropout().keep_scale();
    let input = Matrix::from_rows(&[x]).unwrap();
    let head = net.head(arm);
    let enc_units = net.encoder.dropout_units();
    let head_units = head.dropout_units();

    let latent = |keep: Option<&[bool]>| {
        let masks = keep.map_or_else(|| unmasked(&net.encoder), |k| masks_for(&net.encoder, k, scale));
        net.encoder.forward_with_masks(&input, &masks).unwrap().output().clone()
    };
    let out = |z: &Matrix, keep: Option<&[bool]>| {
        let masks = keep.map_or_else(|| unmasked(head), |k| masks_for(head, k, scale));
        head.forward_with_masks(z, &masks).unwrap().output().get(0, 0)
    };

    let enc = patterns(enc_units, rate);
    let heads = patterns(head_units, rate);
    let mut joint = Vec::new();
    let mut cond_means = Vec::new();
    let mut cond_vars = Vec::new();
    let mut rep_only = Vec::new();
    for (ke, pe) in &enc {
        let z = latent(Some(ke));
        let given: Vec<(f64, f64)> = heads.iter().map(|(kh, ph)| (out(&z, Some(kh)), *ph)).collect();
        let (m, v, _) = moments(&given);
        cond_means.push((m, *pe));
        cond_vars.push(v * pe);
        joint.extend(given.iter().map(|(y, ph)| (*y, ph * pe)));
        rep_only.push((out(&z, None), *pe));
    }
    let (mean, var_tot, mu4_tot) = moments(&joint);
    let (_, var_rep, _) = moments(&cond_means);
    let z0 = latent(None);
    let pred_only: Vec<(f64, f64)> = heads.iter().map(|(kh, ph)| (out(&z0, Some(kh)), *ph)).collect();
    Exact {
        mean,
        var_tot,
        var_rep,
        var_pred: cond_vars.iter().sum(),
        var_rep_only: moments(&rep_only).1,
        var_pred_only: moments(&pred_only).1,
        mu4_tot,
    }
}

/// Relative closeness used by the finite-difference checks.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}
