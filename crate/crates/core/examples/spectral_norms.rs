//! Spectral and Frobenius norms of a few matrices, and the spectral
//! complexity of a small network built from them.
//!
//! cargo run --example spectral_norms

use specbound::bounds::{resnet_complexity, spectral_complexity};
use specbound::linalg::spectral_norm;
use specbound::{rng, Matrix, Network};

fn main() -> specbound::Result<()> {
    let named = [
        ("identity(3)", Matrix::identity(3)),
        ("diag(3, 1)", Matrix::diag(&[3.0, 1.0])),
        ("[[1, 2], [3, 4]]", Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])),
        ("gaussian 200x150", Matrix::gaussian(200, 150, 1.0, &mut rng::stream(0, "example", &[]))),
    ];
    println!("{:<20} {:>14} {:>14}", "matrix", "spectral", "frobenius");
    for (name, w) in &named {
        let s = spectral_norm(w, 1e-12, 1000)?;
        println!("{name:<20} {s:>14.10} {:>14.10}", w.frobenius_norm());
    }

    let square = Network::resnet(vec![Matrix::identity(4), Matrix::diag(&[2.0, 1.0, 0.5, 0.0])])?;
    let plain = Network::feedforward(square.layers().to_vec())?;
    println!("phi (feedforward)  = {:.6}", spectral_complexity(&plain)?);
    println!("phi (residual)     = {:.6}", resnet_complexity(&square)?);
    Ok(())
}
