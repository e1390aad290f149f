//! Backprop weight gradients of the cross-entropy against central
//! differences, on nets away from ReLU kinks.
//!
//! cargo run --release --example gradient_check

use specbound::rng;
use specbound::train::{finite_diff_gradcheck, GradCheck};
use specbound::Network;

fn main() -> specbound::Result<()> {
    for t in 0..8u64 {
        let mut r = rng::stream(1, "example", &[t]);
        let net = Network::he_init(&[5, 12, 12, 4], &mut r)?;
        let x = rng::normal_vec(&mut r, 5);
        match finite_diff_gradcheck(&net, &x, (t % 4) as usize, 1e-6)? {
            GradCheck::Discrepancy(d) => println!("trial {t}: max relative discrepancy {d:.2e}"),
            GradCheck::Inconclusive { min_preactivation } => {
                println!("trial {t}: inconclusive, pre-activation {min_preactivation:.1e} near a kink")
            }
        }
    }
    Ok(())
}
