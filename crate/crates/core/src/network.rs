//! Feedforward and residual ReLU networks without biases.
//!
//! Layer outputs are the pre-activation values `f^i`:
//!
//! ```text
//! feedforward   f^1 = W_1 x,  f^i = W_i relu(f^{i-1})
//! resnet        f^1 = W_1 x,  f^i = W_i relu(f^{i-1}) + f^{i-1}   (i >= 2)
//! ```
//!
//! The residual connection starts at layer 2 because layer 1 maps the input
//! dimension to the hidden width.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    Feedforward,
    Resnet,
}

impl NetworkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::Feedforward => "feedforward",
            NetworkKind::Resnet => "resnet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "feedforward" => Some(NetworkKind::Feedforward),
            "resnet" => Some(NetworkKind::Resnet),
            _ => None,
        }
    }
}

/// Spectral and Frobenius norm of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorms {
    pub spectral: f64,
    pub frobenius: f64,
}

/// Immutable network value. Every transformation returns a new network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    kind: NetworkKind,
    layers: Vec<Matrix>,
}

/// Additive weight perturbation `[U_1..U_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPerturbation {
    pub deltas: Vec<Matrix>,
}

impl LayerPerturbation {
    pub fn zeros_like(net: &Network) -> Self {
        LayerPerturbation {
            deltas: net
                .layers
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }

    /// Independent standard normal entries, shape-matched to `net`.
    pub fn gaussian(net: &Network, rng: &mut StreamRng) -> Self {
        LayerPerturbation {
            deltas: net
                .layers
                .iter()
                .map(|w| Matrix::gaussian(w.rows(), w.cols(), 1.0, rng))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        LayerPerturbation {
            deltas: self.deltas.iter().map(|u| u.scale(s)).collect(),
        }
    }

    pub fn negate(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn spectral_norms(&self) -> Result<Vec<f64>> {
        self.deltas.iter().map(Matrix::spectral_norm).collect()
    }
}

/// Result of [`Network::backprop`].
#[derive(Debug, Clone, PartialEq)]
pub enum Gradient {
    Input(Vec<f64>),
    Weights(LayerPerturbation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientTarget {
    Input,
    Weights,
}

#[inline]
fn relu(t: f64) -> f64 {
    t.max(0.0)
}

impl Network {
    pub fn new(kind: NetworkKind, layers: Vec<Matrix>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::usage("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::usage(format!(
                    "layer {} has {} inputs but layer {} has {} outputs",
                    i + 2,
                    pair[1].cols(),
                    i + 1,
                    pair[0].rows()
                )));
            }
        }
        if kind == NetworkKind::Resnet {
            let h = layers[0].rows();
            for (i, w) in layers.iter().enumerate().skip(1) {
                if w.rows() != h || w.cols() != h {
                    return Err(Error::usage(format!(
                        "resnet layer {} must be {h}x{h} for the residual sum, got {}x{}",
                        i + 1,
                        w.rows(),
                        w.cols()
                    )));
                }
            }
        }
        Ok(Network { kind, layers })
    }

    pub fn feedforward(layers: Vec<Matrix>) -> Result<Self> {
        Network::new(NetworkKind::Feedforward, layers)
    }

    pub fn resnet(layers: Vec<Matrix>) -> Result<Self> {
        Network::new(NetworkKind::Resnet, layers)
    }

    /// He-initialized feedforward network with layer sizes `dims[0] -> dims[1] -> ...`.
    pub fn he_init(dims: &[usize], rng: &mut StreamRng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::usage(format!("invalid layer sizes {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|p| Matrix::gaussian(p[1], p[0], (2.0 / p[0] as f64).sqrt(), rng))
            .collect();
        Network::feedforward(layers)
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    /// Number of layers `d`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Input dimension `n`.
    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    /// Class count `k`.
    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// Width `h`: the largest number of output units over all layers.
    pub fn width(&self) -> usize {
        self.layers.iter().map(Matrix::rows).max().unwrap_or(0)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::usage(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// All pre-activation layer outputs `[f^1, .., f^d]`.
    pub fn layer_outputs(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(self.layer_outputs_unchecked(x))
    }

    fn layer_outputs_unchecked(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        outs.push(self.layers[0].matvec(x));
        for w in &self.layers[1..] {
            let prev = outs.last().expect("non-empty");
            let act: Vec<f64> = prev.iter().copied().map(relu).collect();
            let mut next = w.matvec(&act);
            if self.kind == NetworkKind::Resnet {
                next.iter_mut().zip(prev).for_each(|(a, b)| *a += b);
            }
            outs.push(next);
        }
        outs
    }

    /// Logits `f_w(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = self.layers[0].matvec(x);
        for w in &self.layers[1..] {
            let act: Vec<f64> = cur.iter().copied().map(relu).collect();
            let mut next = w.matvec(&act);
            if self.kind == NetworkKind::Resnet {
                next.iter_mut().zip(&cur).for_each(|(a, b)| *a += b);
            }
            cur = next;
        }
        cur
    }

    /// Pre-activation output of layer `i` (1-based).
    pub fn layer_output(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        if i == 0 || i > self.depth() {
            return Err(Error::usage(format!(
                "layer index {i} out of range 1..={}",
                self.depth()
            )));
        }
        let mut outs = self.layer_outputs(x)?;
        outs.truncate(i);
        Ok(outs.pop().expect("i >= 1"))
    }

    /// Gradient of `seed · f_w(x)` with respect to the input or all weights.
    ///
    /// The ReLU derivative at exactly 0 is taken to be 0.
    pub fn backprop(&self, x: &[f64], seed: &[f64], target: GradientTarget) -> Result<Gradient> {
        self.check_input(x)?;
        if seed.len() != self.output_dim() {
            return Err(Error::usage(format!(
                "seed direction has dimension {}, network outputs {}",
                seed.len(),
                self.output_dim()
            )));
        }
        let outs = self.layer_outputs_unchecked(x);
        let want_weights = target == GradientTarget::Weights;
        let mut grads: Vec<Matrix> = Vec::new();
        let mut g = seed.to_vec();
        for i in (1..self.depth()).rev() {
            let prev = &outs[i - 1];
            if want_weights {
                let act: Vec<f64> = prev.iter().copied().map(relu).collect();
                grads.push(Matrix::outer(&g, &act));
            }
            let mut back = self.layers[i].matvec_t(&g);
            for (b, &z) in back.iter_mut().zip(prev) {
                if z <= 0.0 {
                    *b = 0.0;
                }
            }
            if self.kind == NetworkKind::Resnet {
                back.iter_mut().zip(&g).for_each(|(b, gi)| *b += gi);
            }
            g = back;
        }
        if want_weights {
            grads.push(Matrix::outer(&g, x));
            grads.reverse();
            Ok(Gradient::Weights(LayerPerturbation { deltas: grads }))
        } else {
            Ok(Gradient::Input(self.layers[0].matvec_t(&g)))
        }
    }

    pub fn input_gradient(&self, x: &[f64], seed: &[f64]) -> Result<Vec<f64>> {
        match self.backprop(x, seed, GradientTarget::Input)? {
            Gradient::Input(v) => Ok(v),
            Gradient::Weights(_) => unreachable!(),
        }
    }

    pub fn weight_gradient(&self, x: &[f64], seed: &[f64]) -> Result<LayerPerturbation> {
        match self.backprop(x, seed, GradientTarget::Weights)? {
            Gradient::Weights(u) => Ok(u),
            Gradient::Input(_) => unreachable!(),
        }
    }

    /// Network with layers `W_i + U_i`.
    pub fn perturb(&self, u: &LayerPerturbation) -> Result<Network> {
        if u.deltas.len() != self.depth() {
            return Err(Error::usage(format!(
                "perturbation has {} layers, network has {}",
                u.deltas.len(),
                self.depth()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(&u.deltas)
            .map(|(w, d)| w.try_add(d))
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            kind: self.kind,
            layers,
        })
    }

    pub fn layer_norms(&self) -> Result<Vec<LayerNorms>> {
        self.layers
            .iter()
            .map(|w| {
                Ok(LayerNorms {
                    spectral: w.spectral_norm()?,
                    frobenius: w.frobenius_norm(),
                })
            })
            .collect()
    }

    /// Rescale every layer to spectral norm `β = (∏‖W_i‖₂)^(1/d)`.
    ///
    /// Positive homogeneity of ReLU keeps `f_w` unchanged.
    pub fn beta_normalize(&self) -> Result<Network> {
        if self.kind != NetworkKind::Feedforward {
            return Err(Error::usage(
                "beta normalization is only defined for feedforward networks",
            ));
        }
        let norms = self
            .layers
            .iter()
            .map(Matrix::spectral_norm)
            .collect::<Result<Vec<_>>>()?;
        let beta = geometric_mean(&norms)?;
        let layers = self
            .layers
            .iter()
            .zip(&norms)
            .map(|(w, &s)| w.scale(beta / s))
            .collect();
        Ok(Network {
            kind: self.kind,
            layers,
        })
    }

    /// Upper bound on the ℓ₂ Lipschitz constant of `x ↦ f_w(x)`.
    pub fn input_lipschitz(&self) -> Result<f64> {
        let mut l = 1.0;
        for (i, w) in self.layers.iter().enumerate() {
            let s = w.spectral_norm()?;
            l *= if self.kind == NetworkKind::Resnet && i > 0 {
                s + 1.0
            } else {
                s
            };
        }
        Ok(l)
    }
}

/// `(∏ s_i)^(1/d)`, computed in log space. Fails on any zero entry.
pub fn geometric_mean(norms: &[f64]) -> Result<f64> {
    if let Some(i) = norms.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::numeric(format!(
            "layer {} has zero spectral norm",
            i + 1
        )));
    }
    let mean_log = norms.iter().map(|s| s.ln()).sum::<f64>() / norms.len() as f64;
    Ok(mean_log.exp())
}

pub(crate) fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    linalg::norm2(&linalg::sub(a, b)) / (1.0 + linalg::norm2(b))
}
