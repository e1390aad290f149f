//! Backprop against central differences computed here, independently of
//! the library's own gradient check.

mod common;

use specbound::network::Network;
use specbound::rng;
use specbound::train::{finite_diff_gradcheck, GradCheck};
use specbound::verify::{random_network, NetShape};
use specbound::Matrix;

use common::forward_oracle;

fn seeded_objective(layers: &[Matrix], resnet: bool, x: &[f64], seed: &[f64]) -> f64 {
    forward_oracle(layers, resnet, x).iter().zip(seed).map(|(a, b)| a * b).sum()
}

fn min_hidden_preactivation(net: &Network, x: &[f64]) -> f64 {
    let outs = net.layer_outputs(x).unwrap();
    outs[..net.depth() - 1].iter().flatten().map(|z| z.abs()).fold(f64::INFINITY, f64::min)
}

#[test]
fn weight_and_input_gradients_match_central_differences() {
    let shape = NetShape { max_depth: 4, max_width: 8, max_input: 6, resnet_rate: 0.3 };
    let step = 1e-6;
    let mut checked = 0;
    let mut worst = 0.0f64;
    for t in 0u64.. {
        if checked == 50 {
            break;
        }
        let mut r = rng::stream(77, "grad", &[t]);
        let net = random_network(&mut r, shape);
        let x = rng::normal_vec(&mut r, net.input_dim());
        let seed = rng::normal_vec(&mut r, net.output_dim());
        if min_hidden_preactivation(&net, &x) < 1e-3 {
            continue;
        }
        checked += 1;
        let resnet = net.kind() == specbound::NetworkKind::Resnet;
        let analytic = net.weight_gradient(&x, &seed).unwrap();
        for (l, w) in net.layers().iter().enumerate() {
            for c in 0..w.data().len() {
                let bump = |delta: f64| {
                    let mut layers = net.layers().to_vec();
                    let mut data = layers[l].data().to_vec();
                    data[c] += delta;
                    layers[l] = Matrix::new(w.rows(), w.cols(), data).unwrap();
                    seeded_objective(&layers, resnet, &x, &seed)
                };
                let numeric = (bump(step) - bump(-step)) / (2.0 * step);
                let a = analytic.deltas[l].data()[c];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
            }
        }
        let gx = net.input_gradient(&x, &seed).unwrap();
        for j in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[j] += step;
            lo[j] -= step;
            let numeric = (seeded_objective(net.layers(), resnet, &hi, &seed)
                - seeded_objective(net.layers(), resnet, &lo, &seed))
                / (2.0 * step);
            worst = worst.max((gx[j] - numeric).abs() / gx[j].abs().max(numeric.abs()).max(1e-3));
        }
    }
    assert!(worst <= 1e-4, "max relative discrepancy {worst:e}");
}

#[test]
fn library_gradcheck_on_linear_net() {
    let net = Network::feedforward(vec![Matrix::from_rows(&[&[0.3, -1.2, 0.5], &[1.0, 0.4, -0.7]])]).unwrap();
    match finite_diff_gradcheck(&net, &[0.5, -1.0, 2.0], 1, 1e-5).unwrap() {
        GradCheck::Discrepancy(d) => assert!(d <= 1e-7, "{d:e}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn library_gradcheck_on_two_layer_nets() {
    let mut checked = 0;
    for t in 0u64..200 {
        let mut r = rng::stream(5, "gc", &[t]);
        let net = Network::he_init(&[4, 6, 3], &mut r).unwrap();
        let x = rng::normal_vec(&mut r, 4);
        match finite_diff_gradcheck(&net, &x, (t % 3) as usize, 1e-6).unwrap() {
            GradCheck::Discrepancy(d) => {
                assert!(d <= 1e-4, "trial {t}: {d:e}");
                checked += 1;
            }
            GradCheck::Inconclusive { min_preactivation } => assert!(min_preactivation < 1e-3),
        }
    }
    assert!(checked > 100);
}

#[test]
fn gradcheck_flags_kinks() {
    let net = Network::feedforward(vec![Matrix::from_rows(&[&[1.0, -1.0]]), Matrix::from_rows(&[&[1.0], &[2.0]])]).unwrap();
    assert!(matches!(
        finite_diff_gradcheck(&net, &[0.5, 0.5], 0, 1e-6).unwrap(),
        GradCheck::Inconclusive { .. }
    ));
}
