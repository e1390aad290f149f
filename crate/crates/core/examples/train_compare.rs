//! Paired standard vs adversarial training on 4-class blobs, comparing the
//! final spectral complexity and the bound of each model.
//!
//! cargo run --release --example train_compare -- [epochs]

use std::time::Instant;

use specbound::data::gen_blobs;
use specbound::train::{train, TrainConfig};
use specbound::{generalization_bound, BoundInputs, NormOrder, TheoremTag};

fn main() -> specbound::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let (n, m, b, eps) = (10, 2000, 5.0, 0.5);
    let data = gen_blobs(4, n, m, 2.0, b, 11)?;
    let standard = TrainConfig::standard(vec![32, 32], epochs, 0.05, 32, 3);
    let adversarial = standard.clone().adversarial(NormOrder::L2, eps);

    let start = Instant::now();
    let (net_std, hist_std) = train(&data, &standard)?;
    let (net_adv, hist_adv) = train(&data, &adversarial)?;
    eprintln!("trained both models in {:.1?}", start.elapsed());

    let gamma = 1.0;
    let std_bound = generalization_bound(&net_std, &BoundInputs::new(b, 0.0, gamma, 0.05, m, n), TheoremTag::Standard)?;
    let adv_bound = generalization_bound(&net_adv, &BoundInputs::new(b, eps, gamma, 0.05, m, n), TheoremTag::Robust)?;

    println!("{:<12} {:>12} {:>12} {:>12} {:>12}", "model", "loss", "error", "phi", "bound");
    for (name, hist, report) in [("standard", &hist_std, &std_bound), ("adversarial", &hist_adv, &adv_bound)] {
        let last = hist.last().expect("epochs > 0");
        println!(
            "{:<12} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            name, last.loss, last.error, last.phi, report.bound_value
        );
    }
    Ok(())
}
