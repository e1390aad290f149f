//! Monte-Carlo falsification runs for every perturbation inequality.
//!
//! cargo run --release --example lemma_verification -- [trials] [seed]

use specbound::verify::{run_suite, Suite, SuiteConfig};

fn main() -> specbound::Result<()> {
    let mut args = std::env::args().skip(1);
    let trials = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let config = SuiteConfig::default();
    println!("{:<14} {:>7} {:>10} {:>12} {:>10}", "suite", "trials", "violations", "inconclusive", "min slack");
    for suite in Suite::ALL {
        let s = run_suite(suite, trials, seed, &config)?;
        println!("{:<14} {:>7} {:>10} {:>12} {:>10.3e}", s.name, s.trials, s.violations, s.inconclusive, s.min_slack);
    }
    Ok(())
}
