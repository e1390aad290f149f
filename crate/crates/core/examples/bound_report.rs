//! Every bound variant for one trained network, printed as a table and
//! written as a JSON report.
//!
//! cargo run --release --example bound_report -- [out.json]

use std::path::PathBuf;

use specbound::data::gen_blobs;
use specbound::io::{bound_report, write_report, ReportFormat};
use specbound::train::{train, TrainConfig};
use specbound::{generalization_bound, BoundInputs, NormOrder, TheoremTag};

fn main() -> specbound::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("bounds.json"), PathBuf::from);
    let data = gen_blobs(3, 4, 600, 1.5, 2.0, 1)?;
    let (net, _) = train(&data, &TrainConfig::standard(vec![16, 16], 30, 0.05, 32, 1))?;

    let mut inputs = BoundInputs::new(data.b(), 0.1, 1.0, 0.05, data.len(), data.n());
    inputs.p = NormOrder::Inf;
    inputs.kappa = Some(1.0);
    inputs.d_bound = Some(data.b() + 0.5);

    let modes = [TheoremTag::Standard, TheoremTag::Robust, TheoremTag::RobustLp, TheoremTag::NonLp, TheoremTag::Farnia];
    let reports = modes
        .iter()
        .map(|&mode| generalization_bound(&net, &inputs, mode))
        .collect::<specbound::Result<Vec<_>>>()?;

    println!("{:<10} {:>12} {:>12} {:>12} {:>12} {:>12}", "mode", "magnitude", "phi", "sigma", "kl", "bound");
    for r in &reports {
        println!(
            "{:<10} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            r.theorem_tag.as_str(), r.magnitude, r.phi, r.sigma, r.kl_upper, r.bound_value
        );
    }
    write_report(&bound_report(&reports, Some(1)), &out, ReportFormat::Json)?;
    println!("report written to {}", out.display());
    Ok(())
}
