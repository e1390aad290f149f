#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN
//! Spectrally-normalized PAC-Bayes generalization bounds for ReLU networks.
//!
//! The crate computes norm-based bounds for feedforward and residual ReLU
//! networks under clean and adversarial (ℓ_p ball) evaluation, runs the
//! attacks needed to measure empirical robust margins, and checks the
//! underlying perturbation inequalities by Monte-Carlo falsification.

pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod io;
pub mod linalg;
pub mod margin;
pub mod network;
pub mod rng;
pub mod train;
pub mod verify;

pub use bounds::{generalization_bound, BoundInputs, BoundReport, TheoremTag};
pub use data::{Dataset, Sample};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use margin::{AttackSpec, NormOrder};
pub use network::{LayerPerturbation, Network, NetworkKind};
