//! Finite-difference checks of every analytic gradient.

mod common;

use common::close;
use proptest::prelude::*;
use twindrop::nn::{dropout_mask, DropoutSpec, Matrix, Mlp, RngStream};
use twindrop::twin::{TwinNet, TwinNetConfig};

const STEP: f64 = 1e-6;
const REL: f64 = 1e-4;
const ABS: f64 = 1e-8;
/// Inputs whose pre-activations sit this close to a ReLU kink are skipped.
const KINK: f64 = 1e-3;

fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    let data = (0..rows * cols).map(|_| 2.0 * rng.uniform() - 1.0).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn near_kink(pre: &[Matrix]) -> bool {
    pre.iter().any(|m| m.as_slice().iter().any(|v| v.abs() < KINK))
}

/// Weighted-sum loss so every output coordinate contributes.
fn weighted_loss(out: &Matrix, w: &Matrix) -> f64 {
    out.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
}

fn part<'a>(net: &'a mut TwinNet, name: &str) -> &'a mut Mlp {
    match name {
        "encoder" => &mut net.encoder,
        "head0" => &mut net.head0,
        _ => &mut net.head1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mlp_backward_matches_central_differences(seed in any::<u64>(), masked in any::<bool>()) {
        let mut rng = RngStream::new(seed);
        let mlp = Mlp::init(3, &[5, 4], 2, &mut rng).unwrap();
        let x = random_matrix(6, 3, &mut rng);
        let w = random_matrix(6, 2, &mut rng);
        let masks: Vec<Option<Matrix>> = mlp
            .hidden_widths()
            .iter()
            .map(|&h| masked.then(|| dropout_mask(6, h, DropoutSpec::new(0.3).unwrap(), &mut rng)))
            .collect();
        let cache = mlp.forward_with_masks(&x, &masks).unwrap();
        prop_assume!(!near_kink(cache.pre_activations()));
        let (grads, d_input) = mlp.backward(&cache, &w).unwrap();

        let loss = |m: &Mlp, input: &Matrix| weighted_loss(m.forward_with_masks(input, &masks).unwrap().output(), &w);
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        let mut probe = mlp.clone();
        for (k, tensor) in analytic.iter().enumerate() {
            for (j, &g) in tensor.iter().enumerate() {
                let orig = probe.tensors()[k][j];
                probe.tensors_mut()[k][j] = orig + STEP;
                let up = loss(&probe, &x);
                probe.tensors_mut()[k][j] = orig - STEP;
                let down = loss(&probe, &x);
                probe.tensors_mut()[k][j] = orig;
                let fd = (up - down) / (2.0 * STEP);
                prop_assert!(close(g, fd, REL, ABS), "tensor {k}[{j}]: analytic {g} fd {fd}");
            }
        }
        for j in 0..x.as_slice().len() {
            let mut up = x.clone();
            up.as_mut_slice()[j] += STEP;
            let mut down = x.clone();
            down.as_mut_slice()[j] -= STEP;
            let fd = (loss(&mlp, &up) - loss(&mlp, &down)) / (2.0 * STEP);
            prop_assert!(close(d_input.as_slice()[j], fd, REL, ABS), "input {j}");
        }
    }

    #[test]
    fn factual_loss_gradients_match_central_differences(seed in any::<u64>()) {
        let config = TwinNetConfig {
            input_dim: 2,
            latent_dim: 3,
            encoder_hidden: vec![4],
            head_hidden: vec![3],
            seed,
            ..TwinNetConfig::default()
        };
        let net = TwinNet::new(config).unwrap();
        let mut rng = RngStream::with_stream(seed, 99);
        let x = random_matrix(8, 2, &mut rng);
        let t: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
        let y: Vec<f64> = (0..8).map(|_| rng.uniform()).collect();

        let enc = net.encoder.forward_with_masks(&x, &common::unmasked(&net.encoder)).unwrap();
        let z = enc.output().clone();
        let h0 = net.head0.forward_with_masks(&z, &common::unmasked(&net.head0)).unwrap();
        let h1 = net.head1.forward_with_masks(&z, &common::unmasked(&net.head1)).unwrap();
        prop_assume!(!near_kink(enc.pre_activations()) && !near_kink(h0.pre_activations()) && !near_kink(h1.pre_activations()));

        let g = net.factual_gradients(&x, &t, &y, None).unwrap();
        let loss = |n: &TwinNet| n.factual_gradients(&x, &t, &y, None).unwrap().loss;
        let parts: [(&str, Vec<Vec<f64>>); 3] = [
            ("encoder", g.encoder.tensors().iter().map(|t| t.to_vec()).collect()),
            ("head0", g.head0.as_ref().unwrap().tensors().iter().map(|t| t.to_vec()).collect()),
            ("head1", g.head1.as_ref().unwrap().tensors().iter().map(|t| t.to_vec()).collect()),
        ];
        for (name, tensors) in parts {
            let mut probe = net.clone();
            for (k, tensor) in tensors.iter().enumerate() {
                for (j, &a) in tensor.iter().enumerate() {
                    part(&mut probe, name).tensors_mut()[k][j] += STEP;
                    let up = loss(&probe);
                    part(&mut probe, name).tensors_mut()[k][j] -= 2.0 * STEP;
                    let down = loss(&probe);
                    part(&mut probe, name).tensors_mut()[k][j] += STEP;
                    let fd = (up - down) / (2.0 * STEP);
                    prop_assert!(close(a, fd, REL, ABS), "{name} tensor {k}[{j}]: analytic {a} fd {fd}");
                }
            }
        }
    }
}
