//! Robust margins three ways: closed form for a linear model, projected
//! gradient descent, and the brute-force grid with its error bound.
//!
//! cargo run --release --example robust_margin_attack

use specbound::margin::{
    brute_force_robust_margin, exact_linear_margin, pgd_minimize_margin, GridParams, Objective,
};
use specbound::{rng, AttackSpec, Matrix, Network, NormOrder};

fn main() -> specbound::Result<()> {
    let linear = Network::feedforward(vec![Matrix::from_rows(&[&[1.0, 0.5], &[-0.5, 1.0], &[0.2, -1.0]])])?;
    let x = [0.8, 0.1];
    let label = Objective::Label(0);
    for p in [NormOrder::L1, NormOrder::L2, NormOrder::Inf] {
        let exact = exact_linear_margin(&linear, &x, label, p, 0.3)?;
        let pgd = pgd_minimize_margin(&linear, &x, label, &AttackSpec::new(p, 0.3))?;
        println!("linear, p = {p}: exact {:.6}, pgd {:.6}", exact.value, pgd.value);
    }

    let deep = Network::he_init(&[2, 16, 16, 3], &mut rng::stream(4, "example", &[]))?;
    let spec = AttackSpec::new(NormOrder::L2, 0.25).with_seed(9);
    let pgd = pgd_minimize_margin(&deep, &x, Objective::Pair(0, 1), &spec)?;
    let grid = brute_force_robust_margin(&deep, &x, Objective::Pair(0, 1), 0.25, GridParams::default())?;
    println!(
        "relu net, l2 ball: pgd {:.6}, grid {:.6} (true infimum within {:.2e} below the grid value)",
        pgd.value,
        grid.value,
        grid.gap_bound.unwrap_or(0.0)
    );
    Ok(())
}
