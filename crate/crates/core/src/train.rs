//! Minibatch SGD on cross-entropy, standard or adversarial.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::RngCore;

use crate::bounds::spectral_complexity;
use crate::data::{permutation, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::margin::{margin_label, median, pgd_minimize_margin, AttackSpec, NormOrder, Objective};
use crate::network::{LayerNorms, LayerPerturbation, Network};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Standard,
    Adversarial,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Standard => "standard",
            TrainMode::Adversarial => "adversarial",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(TrainMode::Standard),
            "adversarial" => Ok(TrainMode::Adversarial),
            _ => Err(Error::usage(format!("unknown training mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Hidden layer widths; empty trains a linear classifier.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub mode: TrainMode,
    /// Inner attack for adversarial mode.
    pub attack: AttackSpec,
    pub seed: u64,
}

impl TrainConfig {
    pub fn standard(hidden: Vec<usize>, epochs: usize, lr: f64, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            hidden,
            epochs,
            lr,
            batch_size,
            mode: TrainMode::Standard,
            attack: AttackSpec::training(NormOrder::L2, 0.0),
            seed,
        }
    }

    /// Adversarial mode with the 10-step training attack.
    pub fn adversarial(self, p: NormOrder, epsilon: f64) -> Self {
        TrainConfig {
            mode: TrainMode::Adversarial,
            attack: AttackSpec::training(p, epsilon),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::usage("hidden widths must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::usage(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be positive"));
        }
        if self.mode == TrainMode::Adversarial {
            self.attack.validate()?;
            if !(self.attack.epsilon > 0.0) {
                return Err(Error::usage("adversarial mode needs epsilon > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch cross-entropy over the epoch, on attacked inputs in
    /// adversarial mode.
    pub loss: f64,
    /// Clean training error after the epoch.
    pub error: f64,
    pub margin_median: f64,
    pub phi: f64,
    pub norms: Vec<LayerNorms>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Columns: `epoch,loss,error,margin_median,phi`, then
    /// `spectral_i,frobenius_i` per layer.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let depth = self.records.first().map_or(0, |r| r.norms.len());
        let mut header: Vec<String> = ["epoch", "loss", "error", "margin_median", "phi"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 1..=depth {
            header.push(format!("spectral_{i}"));
            header.push(format!("frobenius_{i}"));
        }
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.records {
            let mut row = vec![
                r.epoch.to_string(),
                format!("{:e}", r.loss),
                format!("{:e}", r.error),
                format!("{:e}", r.margin_median),
                format!("{:e}", r.phi),
            ];
            for n in &r.norms {
                row.push(format!("{:e}", n.spectral));
                row.push(format!("{:e}", n.frobenius));
            }
            w.write_record(&row).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::numeric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::numeric(format!("csv encoding failed: {e}"))
}

/// `log Σ exp(z) - z_y`.
pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[y]
}

/// `softmax(z) - e_y`, the gradient of [`cross_entropy`] in the logits.
pub fn cross_entropy_grad(logits: &[f64], y: usize) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut g: Vec<f64> = exps.iter().map(|e| e / total).collect();
    g[y] -= 1.0;
    g
}

/// Clean error and median label margin over the dataset.
fn evaluate(net: &Network, data: &Dataset) -> Result<(f64, f64)> {
    let margins = data
        .samples()
        .iter()
        .map(|s| margin_label(&net.forward_unchecked(&s.x), s.y))
        .collect::<Result<Vec<f64>>>()?;
    let errors = margins.iter().filter(|&&m| m <= 0.0).count();
    let med = median(&margins).expect("dataset is nonempty");
    Ok((errors as f64 / data.len() as f64, med))
}

/// Train a fresh He-initialized network of shape `n -> hidden... -> k`.
///
/// Deterministic in `(data, config)`: initialization, shuffling and the
/// inner attack each draw from their own stream of `config.seed`.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(Network, TrainHistory)> {
    config.validate()?;
    let mut dims = vec![data.n()];
    dims.extend(&config.hidden);
    dims.push(data.k());
    let mut net = Network::he_init(&dims, &mut rng::stream(config.seed, "init", &[]))?;
    let mut history = TrainHistory::default();
    let samples = data.samples();

    for epoch in 1..=config.epochs {
        let order = permutation(samples.len(), &mut rng::stream(config.seed, "shuffle", &[epoch as u64]));
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grad = LayerPerturbation::zeros_like(&net);
            for &idx in batch {
                let s = &samples[idx];
                let input = match config.mode {
                    TrainMode::Standard => s.x.clone(),
                    TrainMode::Adversarial => {
                        let seed = rng::stream(config.seed, "train-attack", &[epoch as u64, batch_idx as u64, idx as u64])
                            .next_u64();
                        let spec = config.attack.with_seed(seed);
                        pgd_minimize_margin(&net, &s.x, Objective::Label(s.y), &spec)?.witness
                    }
                };
                let logits = net.forward_unchecked(&input);
                loss_sum += cross_entropy(&logits, s.y);
                let g = net.weight_gradient(&input, &cross_entropy_grad(&logits, s.y))?;
                accumulate(&mut grad, &g);
            }
            let scale = -config.lr / batch.len() as f64;
            net = net.perturb(&grad.scale(scale))?;
        }
        let loss = loss_sum / samples.len() as f64;
        if !loss.is_finite() || net.layers().iter().any(|w| w.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::numeric(format!("training diverged at epoch {epoch}")));
        }
        let (error, margin_median) = evaluate(&net, data)?;
        history.records.push(EpochRecord {
            epoch,
            loss,
            error,
            margin_median,
            phi: spectral_complexity(&net)?,
            norms: net.layer_norms()?,
        });
    }
    Ok((net, history))
}

fn accumulate(into: &mut LayerPerturbation, g: &LayerPerturbation) {
    for (a, b) in into.deltas.iter_mut().zip(&g.deltas) {
        a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
    }
}

/// Minimum `|z|` allowed at hidden pre-activations for a gradient check.
pub const KINK_GUARD: f64 = 1e-3;

/// Maximum number of weight coordinates compared by the gradient check.
pub const GRADCHECK_COORDS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCheck {
    /// Max relative discrepancy `|a - n| / max(|a|, |n|, 1e-3)`.
    Discrepancy(f64),
    /// Some hidden pre-activation lies within [`KINK_GUARD`] of zero, so the
    /// finite difference may straddle a kink.
    Inconclusive { min_preactivation: f64 },
}

/// Compare backprop weight gradients of the cross-entropy against central
/// differences with the given step.
pub fn finite_diff_gradcheck(net: &Network, x: &[f64], y: usize, step: f64) -> Result<GradCheck> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::usage(format!("step must be > 0, got {step}")));
    }
    if y >= net.output_dim() {
        return Err(Error::usage(format!("label {y} out of range")));
    }
    let outs = net.layer_outputs(x)?;
    let min_pre = outs[..net.depth() - 1]
        .iter()
        .flatten()
        .map(|z| z.abs())
        .fold(f64::INFINITY, f64::min);
    if min_pre < KINK_GUARD {
        return Ok(GradCheck::Inconclusive { min_preactivation: min_pre });
    }
    let logits = &outs[net.depth() - 1];
    let analytic = net.weight_gradient(x, &cross_entropy_grad(logits, y))?;

    let coords: Vec<(usize, usize)> = net
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(l, w)| (0..w.data().len()).map(move |c| (l, c)))
        .collect();
    let chosen: Vec<usize> = if coords.len() <= GRADCHECK_COORDS {
        (0..coords.len()).collect()
    } else {
        let mut p = permutation(coords.len(), &mut rng::stream(0, "gradcheck", &[]));
        p.truncate(GRADCHECK_COORDS);
        p
    };

    let loss_at = |l: usize, c: usize, delta: f64| -> f64 {
        let mut layers: Vec<Matrix> = net.layers().to_vec();
        layers[l].data_mut()[c] += delta;
        let moved = Network::new(net.kind(), layers).expect("same shapes");
        cross_entropy(&moved.forward_unchecked(x), y)
    };
    let mut worst = 0.0f64;
    for idx in chosen {
        let (l, c) = coords[idx];
        let numeric = (loss_at(l, c, step) - loss_at(l, c, -step)) / (2.0 * step);
        let a = analytic.deltas[l].data()[c];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    Ok(GradCheck::Discrepancy(worst))
}
