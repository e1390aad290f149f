//! Closed-form bound quantities and the theorem-level bounds.
//!
//! All bounds share one explicit constant convention ("lemma-exact"):
//!
//! ```text
//! σ   = γ / (42 d · mag · β̃^(d-1) · √(h ln(4hd)))
//! KL  = Σ ‖W̃_i‖_F² / (2σ²)           (W̃ the β-normalized weights)
//! gap = 4 √((KL + ln(6m/δ)) / (m - 1))
//! ```
//!
//! where `mag` is `B`, `B+ε`, `c_p (B+ε)` or `D` depending on the theorem,
//! and `β̃ = β`. With the union-bound flag the log term becomes
//! `ln(6dm/δ)`. Substituting `σ` gives
//! `KL = 42² d² mag² h ln(4hd) Φ / (2γ²)`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::margin::NormOrder;
use crate::network::{geometric_mean, LayerNorms, Network, NetworkKind};

/// Name of the constant convention written into every report.
pub const CONVENTION: &str = "lemma-exact";

const SIGMA_CONSTANT: f64 = 42.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremTag {
    Standard,
    Robust,
    RobustLp,
    NonLp,
    Resnet,
    Farnia,
}

impl TheoremTag {
    pub fn as_str(self) -> &'static str {
        match self {
            TheoremTag::Standard => "standard",
            TheoremTag::Robust => "robust",
            TheoremTag::RobustLp => "robust_lp",
            TheoremTag::NonLp => "nonlp",
            TheoremTag::Resnet => "resnet",
            TheoremTag::Farnia => "farnia",
        }
    }
}

impl fmt::Display for TheoremTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TheoremTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => TheoremTag::Standard,
            "robust" => TheoremTag::Robust,
            "robust_lp" => TheoremTag::RobustLp,
            "nonlp" => TheoremTag::NonLp,
            "resnet" => TheoremTag::Resnet,
            "farnia" => TheoremTag::Farnia,
            other => return Err(Error::usage(format!("unknown theorem tag {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// ℓ₂ norm bound on the samples.
    pub b: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Training set size.
    pub m: usize,
    pub p: NormOrder,
    /// Input dimension.
    pub n: usize,
    /// Gradient floor of the FGM comparison bound.
    pub kappa: Option<f64>,
    /// Magnitude bound of a non-ℓ_p constraint set.
    pub d_bound: Option<f64>,
    /// Replace `ln(6m/δ)` with `ln(6dm/δ)`.
    pub union_bound: bool,
}

impl BoundInputs {
    pub fn new(b: f64, epsilon: f64, gamma: f64, delta: f64, m: usize, n: usize) -> Self {
        BoundInputs {
            b,
            epsilon,
            gamma,
            delta,
            m,
            p: NormOrder::L2,
            n,
            kappa: None,
            d_bound: None,
            union_bound: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) {
            return Err(Error::usage(format!("B must be > 0, got {}", self.b)));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::usage(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::usage(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::usage(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if self.m < 2 {
            return Err(Error::usage(format!("m must be >= 2, got {}", self.m)));
        }
        if self.n == 0 {
            return Err(Error::usage("input dimension n must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub theorem_tag: TheoremTag,
    /// Spectral complexity (Φ, Φ(f_RN) or Φ^fgm by theorem).
    pub phi: f64,
    pub beta: f64,
    pub sigma: f64,
    pub kl_upper: f64,
    pub per_layer: Vec<LayerNorms>,
    /// The `B`, `B+ε`, `c_p(B+ε)` or `D` entering σ.
    pub magnitude: f64,
    pub bound_value: f64,
    pub c_fgm: Option<f64>,
    pub inputs: BoundInputs,
    pub depth: usize,
    pub width: usize,
}

/// Coefficients `A_i` of the local perturbation bound of the margin operator.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzProfile {
    pub coefficients: Vec<f64>,
}

/// `∏(s_i + offset)² · Σ f_i² / (s_i + offset)²`.
///
/// `offset = 0` is Φ of a feedforward net, `offset = 1` is Φ(f_RN).
pub fn complexity_kernel(norms: &[LayerNorms], offset: f64) -> Result<f64> {
    let mut product = 1.0;
    let mut ratio_sum = 0.0;
    for (i, l) in norms.iter().enumerate() {
        let s = l.spectral + offset;
        if !(s > 0.0) {
            return Err(Error::numeric(format!("layer {} has zero spectral norm", i + 1)));
        }
        product *= s * s;
        ratio_sum += (l.frobenius * l.frobenius) / (s * s);
    }
    Ok(product * ratio_sum)
}

/// Φ(f_w) = ∏‖W_i‖₂² · Σ ‖W_i‖_F² / ‖W_i‖₂².
pub fn spectral_complexity(net: &Network) -> Result<f64> {
    complexity_kernel(&net.layer_norms()?, 0.0)
}

/// Φ(f_RN) = ∏(‖W_i‖₂+1)² · Σ ‖W_i‖_F² / (‖W_i‖₂+1)².
pub fn resnet_complexity(net: &Network) -> Result<f64> {
    if net.kind() != NetworkKind::Resnet {
        return Err(Error::usage("resnet complexity needs a resnet network"));
    }
    complexity_kernel(&net.layer_norms()?, 1.0)
}

/// `A_i = 2e ∏_l a_l / a_i` with `a_l = ‖W_l‖₂` (feedforward) or
/// `‖W_l‖₂ + 1` (resnet).
pub fn lipschitz_profile(net: &Network) -> Result<LipschitzProfile> {
    let offset = match net.kind() {
        NetworkKind::Feedforward => 0.0,
        NetworkKind::Resnet => 1.0,
    };
    let a: Vec<f64> = net
        .layer_norms()?
        .iter()
        .map(|l| l.spectral + offset)
        .collect();
    if let Some(i) = a.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::numeric(format!("layer {} has zero spectral norm", i + 1)));
    }
    let coefficients = (0..a.len())
        .map(|i| {
            let others: f64 = a
                .iter()
                .enumerate()
                .filter(|&(l, _)| l != i)
                .map(|(_, v)| v)
                .product();
            2.0 * std::f64::consts::E * others
        })
        .collect();
    Ok(LipschitzProfile { coefficients })
}

/// `max{1, n^(1/2 - 1/p)}`.
pub fn lp_correction(n: usize, p: NormOrder) -> f64 {
    (n as f64).powf(0.5 - p.reciprocal()).max(1.0)
}

/// `σ = γ / (42 d · magnitude · β̃^(d-1) · √(h ln(4hd)))`.
pub fn sigma_choice(gamma: f64, d: usize, magnitude: f64, beta_tilde: f64, h: usize) -> Result<f64> {
    if !(gamma > 0.0 && magnitude > 0.0 && beta_tilde > 0.0) || d == 0 || h == 0 {
        return Err(Error::usage(format!(
            "sigma needs positive arguments (gamma {gamma}, d {d}, magnitude {magnitude}, beta {beta_tilde}, h {h})"
        )));
    }
    let dh = (h * d) as f64;
    if 4.0 * dh <= 1.0 {
        return Err(Error::usage("sigma needs 4hd > 1"));
    }
    let denom = SIGMA_CONSTANT
        * d as f64
        * magnitude
        * beta_tilde.powi(d as i32 - 1)
        * (h as f64 * (4.0 * dh).ln()).sqrt();
    Ok(gamma / denom)
}

/// `Σ ‖W_i‖_F² / (2σ²)`.
pub fn kl_term(net: &Network, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::usage(format!("sigma must be > 0, got {sigma}")));
    }
    let sq: f64 = net
        .layers()
        .iter()
        .map(|w| w.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(sq / (2.0 * sigma * sigma))
}

/// `4 √((kl + ln(6m/δ)) / (m - 1))`.
pub fn pac_bayes_combine(kl: f64, m: usize, delta: f64) -> Result<f64> {
    combine_with_grid(kl, m, delta, 1)
}

/// Combiner with the log term `ln(6 · grid · m / δ)`.
pub fn combine_with_grid(kl: f64, m: usize, delta: f64, grid: usize) -> Result<f64> {
    if !(kl >= 0.0) {
        return Err(Error::usage(format!("KL must be >= 0, got {kl}")));
    }
    if m < 2 {
        return Err(Error::usage(format!("m must be >= 2, got {m}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::usage(format!("delta must be in (0, 1), got {delta}")));
    }
    let log_term = (6.0 * grid as f64 * m as f64 / delta).ln();
    Ok(4.0 * ((kl + log_term) / (m as f64 - 1.0)).sqrt())
}

fn magnitude_for(inputs: &BoundInputs, mode: TheoremTag) -> Result<f64> {
    Ok(match mode {
        TheoremTag::Standard => inputs.b,
        TheoremTag::Robust | TheoremTag::Resnet | TheoremTag::Farnia => inputs.b + inputs.epsilon,
        TheoremTag::RobustLp => lp_correction(inputs.n, inputs.p) * (inputs.b + inputs.epsilon),
        TheoremTag::NonLp => match inputs.d_bound {
            Some(d) if d > 0.0 => d,
            Some(d) => return Err(Error::usage(format!("D must be > 0, got {d}"))),
            None => return Err(Error::usage("non-lp bound needs the magnitude bound D")),
        },
    })
}

/// PAC-Bayes bound on the generalization gap for the given theorem.
///
/// Feedforward modes evaluate on the β-normalized copy of `net`, so the
/// result is unchanged by rescaling layers. The resnet mode uses
/// `β_RN = (∏(‖W_i‖₂+1))^(1/d)` and the weights `β_RN W_i / (‖W_i‖₂+1)`
/// in the KL numerator, which gives `KL ∝ Φ(f_RN)`.
pub fn generalization_bound(net: &Network, inputs: &BoundInputs, mode: TheoremTag) -> Result<BoundReport> {
    inputs.validate()?;
    if mode == TheoremTag::Farnia {
        return farnia_bound(net, inputs);
    }
    match (net.kind(), mode) {
        (NetworkKind::Resnet, TheoremTag::Resnet) => {}
        (NetworkKind::Resnet, _) => {
            return Err(Error::usage(format!("{mode} bound needs a feedforward network")))
        }
        (NetworkKind::Feedforward, TheoremTag::Resnet) => {
            return Err(Error::usage("resnet bound needs a resnet network"))
        }
        _ => {}
    }
    let magnitude = magnitude_for(inputs, mode)?;
    let d = net.depth();
    let h = net.width();
    let per_layer = net.layer_norms()?;
    let grid = if inputs.union_bound { d } else { 1 };

    let (phi, beta, sigma, kl) = if mode == TheoremTag::Resnet {
        let phi = complexity_kernel(&per_layer, 1.0)?;
        let shifted: Vec<f64> = per_layer.iter().map(|l| l.spectral + 1.0).collect();
        let beta = geometric_mean(&shifted)?;
        let sigma = sigma_choice(inputs.gamma, d, magnitude, beta, h)?;
        let sq: f64 = per_layer
            .iter()
            .zip(&shifted)
            .map(|(l, a)| (beta * l.frobenius / a).powi(2))
            .sum();
        (phi, beta, sigma, sq / (2.0 * sigma * sigma))
    } else {
        let phi = complexity_kernel(&per_layer, 0.0)?;
        let normalized = net.beta_normalize()?;
        let spectral: Vec<f64> = per_layer.iter().map(|l| l.spectral).collect();
        let beta = geometric_mean(&spectral)?;
        let sigma = sigma_choice(inputs.gamma, d, magnitude, beta, h)?;
        (phi, beta, sigma, kl_term(&normalized, sigma)?)
    };
    let bound_value = combine_with_grid(kl, inputs.m, inputs.delta, grid)?;
    Ok(BoundReport {
        theorem_tag: mode,
        phi,
        beta,
        sigma,
        kl_upper: kl,
        per_layer,
        magnitude,
        bound_value,
        c_fgm: None,
        inputs: *inputs,
        depth: d,
        width: h,
    })
}

/// `C^fgm = (ε/κ) (∏‖W_i‖₂) (Σ_i ∏_{j<=i} ‖W_j‖₂)` on the weights as given.
pub fn c_fgm(net: &Network, epsilon: f64, kappa: f64) -> Result<f64> {
    if !(kappa > 0.0) {
        return Err(Error::usage(format!("kappa must be > 0, got {kappa}")));
    }
    let norms = net.layer_norms()?;
    let mut prefix = 1.0;
    let mut prefix_sum = 0.0;
    for l in &norms {
        prefix *= l.spectral;
        prefix_sum += prefix;
    }
    Ok(epsilon / kappa * prefix * prefix_sum)
}

/// FGM comparison bound: the robust pipeline with the KL numerator scaled
/// by `(1 + C^fgm)`.
pub fn farnia_bound(net: &Network, inputs: &BoundInputs) -> Result<BoundReport> {
    let kappa = inputs
        .kappa
        .ok_or_else(|| Error::usage("FGM comparison bound needs kappa"))?;
    if !(kappa > 0.0) {
        return Err(Error::usage(format!("kappa must be > 0, got {kappa}")));
    }
    let robust = generalization_bound(net, inputs, TheoremTag::Robust)?;
    let c = c_fgm(net, inputs.epsilon, kappa)?;
    let kl = robust.kl_upper * (1.0 + c);
    let grid = if inputs.union_bound { net.depth() } else { 1 };
    Ok(BoundReport {
        theorem_tag: TheoremTag::Farnia,
        phi: robust.phi * (1.0 + c),
        kl_upper: kl,
        bound_value: combine_with_grid(kl, inputs.m, inputs.delta, grid)?,
        c_fgm: Some(c),
        ..robust
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn spectral_complexity_examples() {
        let net = Network::feedforward(vec![Matrix::diag(&[2.0, 1.0])]).unwrap();
        assert!(close(spectral_complexity(&net).unwrap(), 5.0, 1e-12));
        let h = 3;
        let net = Network::feedforward(vec![Matrix::identity(h), Matrix::identity(h)]).unwrap();
        assert!(close(spectral_complexity(&net).unwrap(), 2.0 * h as f64, 1e-12));
        let zero = Network::feedforward(vec![Matrix::zeros(2, 2)]).unwrap();
        assert!(matches!(spectral_complexity(&zero), Err(Error::Numeric(_))));
    }

    #[test]
    fn resnet_complexity_examples() {
        let h = 4;
        let net = Network::resnet(vec![Matrix::identity(h), Matrix::identity(h)]).unwrap();
        assert!(close(resnet_complexity(&net).unwrap(), 8.0 * h as f64, 1e-12));
        let zero = Network::resnet(vec![Matrix::zeros(2, 2), Matrix::zeros(2, 2)]).unwrap();
        assert_eq!(resnet_complexity(&zero).unwrap(), 0.0);
    }

    #[test]
    fn lipschitz_examples() {
        let e2 = 2.0 * std::f64::consts::E;
        let one = Network::feedforward(vec![Matrix::diag(&[3.0, 1.0])]).unwrap();
        assert!(close(lipschitz_profile(&one).unwrap().coefficients[0], e2, 1e-12));
        let two = Network::feedforward(vec![Matrix::identity(2), Matrix::identity(2)]).unwrap();
        assert_eq!(lipschitz_profile(&two).unwrap().coefficients, vec![e2, e2]);
        let res = Network::resnet(vec![Matrix::identity(2)]).unwrap();
        assert!(close(lipschitz_profile(&res).unwrap().coefficients[0], e2, 1e-12));
        let zero = Network::feedforward(vec![Matrix::zeros(2, 2)]).unwrap();
        assert!(lipschitz_profile(&zero).is_err());
    }

    #[test]
    fn lp_correction_spot_values() {
        assert_eq!(lp_correction(7, NormOrder::L2), 1.0);
        assert_eq!(lp_correction(4, NormOrder::Inf), 2.0);
        assert_eq!(lp_correction(9, NormOrder::L1), 1.0);
    }

    #[test]
    fn sigma_examples() {
        let s = sigma_choice(1.0, 2, 1.0, 1.0, 2).unwrap();
        let expected = 1.0 / (84.0 * (2.0 * 16f64.ln()).sqrt());
        assert!(close(s, expected, 1e-14));
        assert!((s - 5.06e-3).abs() < 5e-6);
        assert_eq!(sigma_choice(2.0, 2, 1.0, 1.0, 2).unwrap(), 2.0 * s);
        assert!(sigma_choice(1.0, 2, 1.0, 1.0, 2).unwrap() > sigma_choice(1.0, 2, 1.5, 1.0, 2).unwrap());
        assert!(sigma_choice(0.0, 2, 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn kl_examples() {
        let zero = Network::feedforward(vec![Matrix::zeros(2, 2)]).unwrap();
        assert_eq!(kl_term(&zero, 0.3).unwrap(), 0.0);
        let id = Network::feedforward(vec![Matrix::identity(2)]).unwrap();
        assert_eq!(kl_term(&id, 1.0).unwrap(), 1.0);
        let sigma = sigma_choice(1.0, 1, 1.0, 1.0, 2).unwrap();
        let expected = 42.0 * 42.0 * 2.0 * 8f64.ln() / 2.0 * 2.0;
        assert!(close(kl_term(&id, sigma).unwrap(), expected, 1e-12));
        assert!((expected - 7.34e3).abs() < 5.0);
        assert!(kl_term(&id, 0.0).is_err());
    }

    #[test]
    fn combiner_examples() {
        let v = pac_bayes_combine(1.0, 1000, 0.05).unwrap();
        assert!(close(v, 4.0 * ((1.0 + 120000f64.ln()) / 999.0).sqrt(), 1e-14));
        assert!((v - 0.4509).abs() < 1e-4);
        assert!(pac_bayes_combine(0.0, 1 << 40, 0.05).unwrap() < 1e-4);
        assert!(pac_bayes_combine(-1.0, 10, 0.05).is_err());
        assert!(pac_bayes_combine(1.0, 1, 0.05).is_err());
        assert!(pac_bayes_combine(1.0, 10, 1.0).is_err());
    }

    #[test]
    fn farnia_constant_example() {
        let net = Network::feedforward(vec![Matrix::diag(&[2.0, 1.0])]).unwrap();
        assert!(close(c_fgm(&net, 0.5, 0.25).unwrap(), 8.0, 1e-12));
        assert!(c_fgm(&net, 0.5, 0.0).is_err());
    }

    #[test]
    fn mode_kind_mismatch() {
        let ff = Network::feedforward(vec![Matrix::identity(2)]).unwrap();
        let res = Network::resnet(vec![Matrix::identity(2)]).unwrap();
        let inputs = BoundInputs::new(1.0, 0.1, 1.0, 0.05, 100, 2);
        assert!(generalization_bound(&ff, &inputs, TheoremTag::Resnet).is_err());
        assert!(generalization_bound(&res, &inputs, TheoremTag::Robust).is_err());
        assert!(generalization_bound(&res, &inputs, TheoremTag::Resnet).is_ok());
        assert!(generalization_bound(&ff, &inputs, TheoremTag::NonLp).is_err());
        assert!(generalization_bound(&ff, &inputs, TheoremTag::Farnia).is_err());
    }

    #[test]
    fn union_bound_flag_enlarges_log_term() {
        let net = Network::feedforward(vec![Matrix::identity(2), Matrix::identity(2)]).unwrap();
        let mut inputs = BoundInputs::new(1.0, 0.1, 1.0, 0.05, 100, 2);
        let plain = generalization_bound(&net, &inputs, TheoremTag::Robust).unwrap();
        inputs.union_bound = true;
        let union = generalization_bound(&net, &inputs, TheoremTag::Robust).unwrap();
        let expected = combine_with_grid(plain.kl_upper, 100, 0.05, 2).unwrap();
        assert_eq!(union.bound_value, expected);
        assert!(union.bound_value > plain.bound_value);
    }
}
