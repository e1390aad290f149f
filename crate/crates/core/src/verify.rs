//! Monte-Carlo falsification of the perturbation inequalities behind the
//! bounds.
//!
//! Each check compares a measured quantity against the right-hand side of an
//! inequality. Trials draw from their own random stream keyed by
//! `(seed, suite, trial_id)`, so suites give the same summary regardless of
//! thread count or execution order.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::bounds::{lipschitz_profile, spectral_complexity};
use crate::error::{Error, Result};
use crate::linalg::{norm2, spectral_norm, Matrix};
use crate::margin::{
    exact_linear_margin, grid_candidates, margin_input_lipschitz, grid_covering_radius,
    brute_force_robust_margin, GridParams, MarginResult, NormOrder, Objective,
};
use crate::network::{relative_gap, LayerPerturbation, Network, NetworkKind};
use crate::rng::{self, StreamRng};

/// Absolute slack added to every pass threshold.
pub const ABS_SLACK: f64 = 1e-12;

/// Relative tolerance of the homogeneity checks.
pub const HOMOGENEITY_TOL: f64 = 1e-9;

/// Minimum number of draws for the Gaussian tail check.
pub const MIN_TAIL_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub trial_id: u64,
    pub measured_gap: f64,
    pub bound_value: f64,
    /// `bound / measured`, `+∞` when nothing was measured.
    pub slack_ratio: f64,
    /// Discretization or statistical error allowed on top of the bound.
    pub oracle_error_bound: f64,
    pub pass: bool,
    /// Passed only thanks to `oracle_error_bound`.
    pub inconclusive: bool,
}

impl TrialReport {
    pub fn new(trial_id: u64, measured_gap: f64, bound_value: f64, oracle_error_bound: f64) -> Self {
        let slack_ratio = if measured_gap == 0.0 {
            f64::INFINITY
        } else {
            bound_value / measured_gap
        };
        let pass = measured_gap <= bound_value + oracle_error_bound + ABS_SLACK;
        let inconclusive = pass && measured_gap > bound_value + ABS_SLACK;
        TrialReport {
            trial_id,
            measured_gap,
            bound_value,
            slack_ratio,
            oracle_error_bound,
            pass,
            inconclusive,
        }
    }

    fn with_id(self, trial_id: u64) -> Self {
        TrialReport { trial_id, ..self }
    }
}

/// Upper edges of the slack-ratio histogram bins; the last bin is `+∞`.
pub const HISTOGRAM_EDGES: [f64; 6] = [1.0, 2.0, 10.0, 100.0, 1e3, f64::INFINITY];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    pub inconclusive: usize,
    pub min_slack: f64,
    /// Counts per bin: `< 1`, `[1, 2)`, `[2, 10)`, `[10, 100)`, `[100, 1e3)`,
    /// `[1e3, ∞)`, `∞`.
    pub histogram: Vec<usize>,
}

impl SuiteSummary {
    pub fn from_trials(name: &str, reports: &[TrialReport]) -> Self {
        let mut histogram = vec![0usize; HISTOGRAM_EDGES.len() + 1];
        for r in reports {
            let bin = if r.slack_ratio.is_infinite() {
                HISTOGRAM_EDGES.len()
            } else {
                HISTOGRAM_EDGES
                    .iter()
                    .position(|&e| r.slack_ratio < e)
                    .unwrap_or(HISTOGRAM_EDGES.len() - 1)
            };
            histogram[bin] += 1;
        }
        SuiteSummary {
            name: name.to_string(),
            trials: reports.len(),
            violations: reports.iter().filter(|r| !r.pass).count(),
            inconclusive: reports.iter().filter(|r| r.inconclusive).count(),
            min_slack: reports.iter().map(|r| r.slack_ratio).fold(f64::INFINITY, f64::min),
            histogram,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub fn histogram_labels() -> Vec<&'static str> {
    vec!["<1", "1-2", "2-10", "10-100", "100-1e3", ">=1e3", "inf"]
}

/// Rescale each `U_i` so that `‖U_i‖₂ <= ‖W_i‖₂ / d`.
pub fn rescale_to_lemma_region(net: &Network, u: &LayerPerturbation) -> Result<LayerPerturbation> {
    if u.deltas.len() != net.depth() {
        return Err(Error::usage("perturbation depth does not match network"));
    }
    let d = net.depth() as f64;
    let deltas = net
        .layers()
        .iter()
        .zip(&u.deltas)
        .map(|(w, ui)| {
            let cap = w.spectral_norm()? / d;
            let s = ui.spectral_norm()?;
            Ok(if s > cap { ui.scale(cap / s) } else { ui.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerPerturbation { deltas })
}

/// Per-layer `(Δ_i, bound_i)` for the layer-output perturbation recursion
///
/// ```text
/// Δ_i = |f^i_{w+u}(x) - f^i_w(x)|₂
///     <= (1 + 1/d)^i (∏_{j<=i} a_j) |x|₂ Σ_{j<=i} ‖U_j‖₂ / a_j
/// ```
///
/// with `a_j = ‖W_j‖₂` (feedforward) or `‖W_j‖₂ + 1` (resnet). `u` must
/// already satisfy `‖U_i‖₂ <= ‖W_i‖₂ / d`.
pub fn layer_recursion_profile(
    net: &Network,
    x: &[f64],
    u: &LayerPerturbation,
) -> Result<Vec<(f64, f64)>> {
    let perturbed = net.perturb(u)?;
    let base = net.layer_outputs(x)?;
    let moved = perturbed.layer_outputs(x)?;
    let offset = if net.kind() == NetworkKind::Resnet { 1.0 } else { 0.0 };
    let a: Vec<f64> = net
        .layers()
        .iter()
        .map(|w| Ok(w.spectral_norm()? + offset))
        .collect::<Result<_>>()?;
    let un = u.spectral_norms()?;
    let d = net.depth() as f64;
    let xn = norm2(x);
    let mut out = Vec::with_capacity(net.depth());
    for i in 0..net.depth() {
        // ∏ a_j Σ ‖U_j‖/a_j without dividing by a possibly zero a_j
        let weighted: f64 = (0..=i)
            .map(|j| {
                un[j]
                    * (0..=i)
                        .filter(|&l| l != j)
                        .map(|l| a[l])
                        .product::<f64>()
            })
            .sum();
        let bound = (1.0 + 1.0 / d).powi(i as i32 + 1) * xn * weighted;
        let gap = norm2(&crate::linalg::sub(&moved[i], &base[i]));
        out.push((gap, bound));
    }
    Ok(out)
}

/// Layer-recursion check; reports the layer with the smallest slack.
/// `u` is first rescaled into the lemma region.
pub fn verify_layer_recursion(net: &Network, x: &[f64], u: &LayerPerturbation) -> Result<TrialReport> {
    let u = rescale_to_lemma_region(net, u)?;
    let profile = layer_recursion_profile(net, x, &u)?;
    let worst = profile
        .iter()
        .map(|&(gap, bound)| TrialReport::new(0, gap, bound, 0.0))
        .min_by(|a, b| {
            (a.pass, a.slack_ratio)
                .partial_cmp(&(b.pass, b.slack_ratio))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("depth >= 1");
    Ok(worst)
}

/// `Σ_i A_i ‖U_i‖₂`, the margin perturbation bound per unit input magnitude.
fn perturbation_rate(net: &Network, u: &LayerPerturbation) -> Result<f64> {
    let profile = lipschitz_profile(net)?;
    let un = u.spectral_norms()?;
    Ok(profile.coefficients.iter().zip(&un).map(|(a, s)| a * s).sum())
}

fn check_norm_bound(x: &[f64], b: f64) -> Result<()> {
    let xn = norm2(x);
    if xn > b {
        return Err(Error::usage(format!("|x| = {xn} exceeds B = {b}")));
    }
    Ok(())
}

/// `|M(f_{w+u}(x),i,j) - M(f_w(x),i,j)| <= B Σ_i A_i ‖U_i‖₂`
/// (for feedforward nets `2eB ∏‖W_l‖₂ Σ ‖U_i‖₂/‖W_i‖₂`).
pub fn verify_margin_perturbation(
    net: &Network,
    x: &[f64],
    u: &LayerPerturbation,
    i: usize,
    j: usize,
    b: f64,
) -> Result<TrialReport> {
    check_norm_bound(x, b)?;
    let u = rescale_to_lemma_region(net, &u.clone())?;
    let perturbed = net.perturb(&u)?;
    let objective = Objective::Pair(i, j);
    let before = objective.evaluate(&net.forward(x)?)?;
    let after = objective.evaluate(&perturbed.forward(x)?)?;
    let bound = b * perturbation_rate(net, &u)?;
    Ok(TrialReport::new(0, (after - before).abs(), bound, 0.0))
}

fn robust_pair_margin(net: &Network, x: &[f64], i: usize, j: usize, eps: f64, params: GridParams) -> Result<MarginResult> {
    if net.depth() == 1 {
        exact_linear_margin(net, x, Objective::Pair(i, j), NormOrder::L2, eps)
    } else {
        brute_force_robust_margin(net, x, Objective::Pair(i, j), eps, params)
    }
}

/// `|RM(f_{w+u}(x),i,j) - RM(f_w(x),i,j)| <= (B+ε) Σ_i A_i ‖U_i‖₂`.
///
/// Both robust margins come from the grid oracle (closed form for a single
/// layer); the sum of their reported gap bounds is the allowed oracle error.
#[allow(clippy::too_many_arguments)]
pub fn verify_robust_margin_perturbation(
    net: &Network,
    x: &[f64],
    u: &LayerPerturbation,
    i: usize,
    j: usize,
    b: f64,
    epsilon: f64,
    params: GridParams,
) -> Result<TrialReport> {
    if x.len() > 3 {
        return Err(Error::usage("robust margin check needs input dimension <= 3"));
    }
    check_norm_bound(x, b)?;
    let u = rescale_to_lemma_region(net, u)?;
    let perturbed = net.perturb(&u)?;
    let before = robust_pair_margin(net, x, i, j, epsilon, params)?;
    let after = robust_pair_margin(&perturbed, x, i, j, epsilon, params)?;
    let bound = (b + epsilon) * perturbation_rate(net, &u)?;
    let slack = before.gap_bound.unwrap_or(0.0) + after.gap_bound.unwrap_or(0.0);
    Ok(TrialReport::new(0, (after.value - before.value).abs(), bound, slack))
}

/// Endpoint inequality for robustified functions:
///
/// ```text
/// |inf g_w - inf g_w'| <= max(|g_w(x(w)) - g_w'(x(w))|, |g_w(x(w')) - g_w'(x(w'))|)
/// ```
///
/// with `g = M(f(·), i, j)` over the ℓ₂ ball and `x(w)` the minimizer of
/// `g_w`. Minimizers are located on the shared grid; the inequality holds
/// exactly for grid minima, and the distance between grid and true infima
/// is reported as the oracle error.
pub fn verify_endpoint_inequality(
    net_a: &Network,
    net_b: &Network,
    x: &[f64],
    epsilon: f64,
    i: usize,
    j: usize,
    params: GridParams,
) -> Result<TrialReport> {
    if net_a.input_dim() != net_b.input_dim() || net_a.output_dim() != net_b.output_dim() {
        return Err(Error::usage("endpoint check needs networks with matching shapes"));
    }
    let points = grid_candidates(x, epsilon, params)?;
    let objective = Objective::Pair(i, j);
    let mut min_a = (f64::INFINITY, 0);
    let mut min_b = (f64::INFINITY, 0);
    let mut values = Vec::with_capacity(points.len());
    for (idx, p) in points.iter().enumerate() {
        let ga = objective.evaluate(&net_a.forward(p)?)?;
        let gb = objective.evaluate(&net_b.forward(p)?)?;
        if ga < min_a.0 {
            min_a = (ga, idx);
        }
        if gb < min_b.0 {
            min_b = (gb, idx);
        }
        values.push((ga, gb));
    }
    let lhs = (min_a.0 - min_b.0).abs();
    let at_a = values[min_a.1];
    let at_b = values[min_b.1];
    let rhs = (at_a.0 - at_a.1).abs().max((at_b.0 - at_b.1).abs());
    let radius = grid_covering_radius(x.len(), epsilon, params.resolution);
    let slack = if epsilon == 0.0 {
        0.0
    } else {
        (margin_input_lipschitz(net_a)? + margin_input_lipschitz(net_b)?) * radius
    };
    Ok(TrialReport::new(0, lhs, rhs, slack))
}

/// `P[‖U‖₂ > t] <= 2h exp(-t² / (2hσ²))` for `h×h` matrices with i.i.d.
/// `N(0, σ²)` entries. One trial per grid point; the allowed error is three
/// binomial standard errors of the empirical frequency.
pub fn verify_gaussian_tail(h: usize, sigma: f64, t_grid: &[f64], trials: usize, seed: u64) -> Result<SuiteSummary> {
    if trials < MIN_TAIL_DRAWS {
        return Err(Error::usage(format!(
            "tail check needs at least {MIN_TAIL_DRAWS} draws, got {trials}"
        )));
    }
    if h == 0 || !(sigma >= 0.0) {
        return Err(Error::usage("tail check needs h >= 1 and sigma >= 0"));
    }
    let reports = tail_reports(h, sigma, t_grid, trials, seed)?;
    Ok(SuiteSummary::from_trials(&format!("tail-h{h}"), &reports))
}

/// `f_w̃ = f_w` and `Φ(w̃) = Φ(w)` under β-normalization. One trial per
/// input plus a final trial for Φ.
pub fn verify_homogeneity(net: &Network, xs: &[Vec<f64>]) -> Result<SuiteSummary> {
    Ok(SuiteSummary::from_trials("homogeneity", &homogeneity_trials(net, xs)?))
}

fn homogeneity_trials(net: &Network, xs: &[Vec<f64>]) -> Result<Vec<TrialReport>> {
    let normalized = net.beta_normalize()?;
    let mut reports = Vec::with_capacity(xs.len() + 1);
    for (idx, x) in xs.iter().enumerate() {
        let gap = relative_gap(&normalized.forward(x)?, &net.forward(x)?);
        reports.push(TrialReport::new(idx as u64, gap, HOMOGENEITY_TOL, 0.0));
    }
    let phi = spectral_complexity(net)?;
    let phi_norm = spectral_complexity(&normalized)?;
    let rel = (phi - phi_norm).abs() / phi.abs().max(f64::MIN_POSITIVE);
    reports.push(TrialReport::new(xs.len() as u64, rel, HOMOGENEITY_TOL, 0.0));
    Ok(reports)
}

/// The randomized suites behind `specbound verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Recursion,
    Margin,
    RobustMargin,
    Endpoint,
    Tail,
    Homogeneity,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Recursion,
        Suite::Margin,
        Suite::RobustMargin,
        Suite::Endpoint,
        Suite::Tail,
        Suite::Homogeneity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Recursion => "recursion",
            Suite::Margin => "margin",
            Suite::RobustMargin => "robust-margin",
            Suite::Endpoint => "endpoint",
            Suite::Tail => "tail",
            Suite::Homogeneity => "homogeneity",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.as_str() == s)
            .ok_or_else(|| Error::usage(format!("unknown suite {s:?}")))
    }
}

/// Knobs of the randomized suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    /// Grid points per axis for the brute-force oracle.
    pub resolution: usize,
    pub extra_samples: usize,
    /// Inputs per network in the homogeneity suite.
    pub homogeneity_inputs: usize,
    /// Widths of the tail suite.
    pub tail_widths: [usize; 3],
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            resolution: 41,
            extra_samples: 16,
            homogeneity_inputs: 100,
            tail_widths: [2, 8, 32],
        }
    }
}

/// Shape limits for random network generation.
#[derive(Debug, Clone, Copy)]
pub struct NetShape {
    pub max_depth: usize,
    pub max_width: usize,
    pub max_input: usize,
    /// Probability of drawing a resnet instead of a feedforward net.
    pub resnet_rate: f64,
}

/// Random network with layer entries `N(0, c²/fan_in)`, `c ~ U[0.5, 2]`.
pub fn random_network(rng: &mut StreamRng, shape: NetShape) -> Network {
    let d = rng.random_range(1..=shape.max_depth);
    let n = rng.random_range(1..=shape.max_input);
    let resnet = shape.max_width >= 2 && rng.random::<f64>() < shape.resnet_rate;
    let mut dims = vec![n];
    if resnet {
        let h = rng.random_range(2..=shape.max_width);
        dims.extend(std::iter::repeat_n(h, d));
    } else {
        for _ in 1..d {
            dims.push(rng.random_range(1..=shape.max_width));
        }
        dims.push(rng.random_range(2..=shape.max_width.max(2)));
    }
    let layers = dims
        .windows(2)
        .map(|p| {
            let c = rng.random_range(0.5..2.0);
            Matrix::gaussian(p[1], p[0], c / (p[0] as f64).sqrt(), rng)
        })
        .collect();
    let kind = if resnet { NetworkKind::Resnet } else { NetworkKind::Feedforward };
    Network::new(kind, layers).expect("consistent random shapes")
}

/// Gaussian perturbation with `‖U_i‖₂ = τ_i ‖W_i‖₂ / d`, `τ_i ~ U(0, 1]`.
pub fn random_lemma_perturbation(net: &Network, rng: &mut StreamRng) -> Result<LayerPerturbation> {
    let raw = LayerPerturbation::gaussian(net, rng);
    let d = net.depth() as f64;
    let deltas = net
        .layers()
        .iter()
        .zip(&raw.deltas)
        .map(|(w, g)| {
            let tau = 1.0 - rng.random::<f64>();
            let target = tau * w.spectral_norm()? / d;
            let s = g.spectral_norm()?;
            Ok(if s > 0.0 { g.scale(target / s) } else { g.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerPerturbation { deltas })
}

fn random_input(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    let scale = rng.random_range(0.1..3.0);
    let g = rng::normal_vec(rng, n);
    let len = norm2(&g).max(f64::MIN_POSITIVE);
    g.iter().map(|v| v * scale / len).collect()
}

fn random_pair(rng: &mut StreamRng, k: usize) -> (usize, usize) {
    (rng.random_range(0..k), rng.random_range(0..k))
}

const LARGE: NetShape = NetShape {
    max_depth: 4,
    max_width: 16,
    max_input: 16,
    resnet_rate: 0.25,
};

const SMALL: NetShape = NetShape {
    max_depth: 3,
    max_width: 8,
    max_input: 3,
    resnet_rate: 0.25,
};

fn run_trials<F>(name: &str, trials: usize, seed: u64, f: F) -> Result<SuiteSummary>
where
    F: Fn(&mut StreamRng) -> Result<TrialReport> + Sync,
{
    let reports: Vec<TrialReport> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, name, &[t]);
            f(&mut r).map(|rep| rep.with_id(t))
        })
        .collect::<Result<_>>()?;
    Ok(SuiteSummary::from_trials(name, &reports))
}

/// Run one randomized suite. The tail suite uses `max(trials, 10⁴)` draws
/// per width and returns one summary covering every width.
pub fn run_suite(suite: Suite, trials: usize, seed: u64, config: &SuiteConfig) -> Result<SuiteSummary> {
    if trials == 0 {
        return Err(Error::usage("trials must be at least 1"));
    }
    let grid = |r: &mut StreamRng| GridParams {
        resolution: config.resolution,
        extra_samples: config.extra_samples,
        seed: r.random(),
    };
    let name = suite.as_str();
    match suite {
        Suite::Recursion => run_trials(name, trials, seed, |r| {
            let net = random_network(r, NetShape { resnet_rate: 0.0, ..LARGE });
            let x = random_input(r, net.input_dim());
            let u = random_lemma_perturbation(&net, r)?;
            verify_layer_recursion(&net, &x, &u)
        }),
        Suite::Margin => run_trials(name, trials, seed, |r| {
            let net = random_network(r, LARGE);
            let x = random_input(r, net.input_dim());
            let u = random_lemma_perturbation(&net, r)?;
            let (i, j) = random_pair(r, net.output_dim());
            let b = norm2(&x) * (1.0 + 0.5 * r.random::<f64>());
            verify_margin_perturbation(&net, &x, &u, i, j, b)
        }),
        Suite::RobustMargin => run_trials(name, trials, seed, |r| {
            let net = random_network(r, SMALL);
            let x = random_input(r, net.input_dim());
            let u = random_lemma_perturbation(&net, r)?;
            let (i, j) = random_pair(r, net.output_dim());
            let b = norm2(&x);
            let eps = 0.5 * (1.0 - r.random::<f64>());
            verify_robust_margin_perturbation(&net, &x, &u, i, j, b, eps, grid(r))
        }),
        Suite::Endpoint => run_trials(name, trials, seed, |r| {
            let net = random_network(r, SMALL);
            let x = random_input(r, net.input_dim());
            let u = random_lemma_perturbation(&net, r)?.scale(net.depth() as f64);
            let other = net.perturb(&u)?;
            let (i, j) = random_pair(r, net.output_dim());
            let eps = 0.5 * (1.0 - r.random::<f64>());
            verify_endpoint_inequality(&net, &other, &x, eps, i, j, grid(r))
        }),
        Suite::Homogeneity => {
            let per_net: Vec<Vec<TrialReport>> = (0..trials as u64)
                .into_par_iter()
                .map(|t| {
                    let mut r = rng::stream(seed, name, &[t]);
                    let net = random_network(&mut r, NetShape { resnet_rate: 0.0, ..LARGE });
                    let xs: Vec<Vec<f64>> = (0..config.homogeneity_inputs)
                        .map(|_| random_input(&mut r, net.input_dim()))
                        .collect();
                    homogeneity_trials(&net, &xs)
                })
                .collect::<Result<_>>()?;
            // one trial per network: its worst check
            let reports: Vec<TrialReport> = per_net
                .into_iter()
                .enumerate()
                .map(|(t, reps)| {
                    reps.into_iter()
                        .max_by(|a, b| a.measured_gap.total_cmp(&b.measured_gap))
                        .expect("at least the phi check")
                        .with_id(t as u64)
                })
                .collect();
            Ok(SuiteSummary::from_trials(name, &reports))
        }
        Suite::Tail => {
            let draws = trials.max(MIN_TAIL_DRAWS);
            let mut reports = Vec::new();
            for &h in &config.tail_widths {
                let grid = tail_grid(h, 1.0);
                let summary_seed = rng::stream(seed, name, &[h as u64]).random();
                let part = tail_reports(h, 1.0, &grid, draws, summary_seed)?;
                reports.extend(part);
            }
            let reports: Vec<TrialReport> = reports
                .into_iter()
                .enumerate()
                .map(|(i, r)| r.with_id(i as u64))
                .collect();
            Ok(SuiteSummary::from_trials(name, &reports))
        }
    }
}

/// `t = jσ√h`, `j = 0..=5`.
pub fn tail_grid(h: usize, sigma: f64) -> Vec<f64> {
    (0..=5).map(|j| j as f64 * sigma * (h as f64).sqrt()).collect()
}

/// `2h exp(-t² / (2hσ²))`, with the `σ = 0` limit taken explicitly.
pub fn tail_bound(h: usize, sigma: f64, t: f64) -> f64 {
    if sigma == 0.0 {
        return if t >= 0.0 { 0.0 } else { 2.0 * h as f64 };
    }
    2.0 * h as f64 * (-t * t / (2.0 * h as f64 * sigma * sigma)).exp()
}

fn tail_reports(h: usize, sigma: f64, grid: &[f64], draws: usize, seed: u64) -> Result<Vec<TrialReport>> {
    let norms: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|draw| {
            let mut r = rng::stream(seed, "tail", &[h as u64, draw as u64]);
            spectral_norm(&Matrix::gaussian(h, h, sigma, &mut r), 1e-8, 1000)
        })
        .collect::<Result<_>>()?;
    let n = draws as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(idx, &t)| {
            let freq = norms.iter().filter(|&&s| s > t).count() as f64 / n;
            let se = (freq * (1.0 - freq) / n).sqrt();
            TrialReport::new(idx as u64, freq, tail_bound(h, sigma, t), 3.0 * se)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net2() -> Network {
        Network::feedforward(vec![
            Matrix::from_rows(&[&[1.0, 0.5], &[-0.3, 0.8], &[0.2, 0.1]]),
            Matrix::from_rows(&[&[0.7, -1.0, 0.4], &[0.1, 0.9, -0.5]]),
        ])
        .unwrap()
    }

    #[test]
    fn zero_perturbation_passes_everywhere() {
        let net = net2();
        let x = [0.4, -0.7];
        let zero = LayerPerturbation::zeros_like(&net);
        let r = verify_layer_recursion(&net, &x, &zero).unwrap();
        assert_eq!((r.measured_gap, r.bound_value, r.pass), (0.0, 0.0, true));
        let r = verify_margin_perturbation(&net, &x, &zero, 0, 1, 1.0).unwrap();
        assert_eq!(r.measured_gap, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn same_class_pair_has_zero_gap() {
        let net = net2();
        let mut r = rng::stream(1, "t", &[]);
        let u = random_lemma_perturbation(&net, &mut r).unwrap();
        let rep = verify_margin_perturbation(&net, &[0.4, -0.7], &u, 1, 1, 1.0).unwrap();
        assert_eq!(rep.measured_gap, 0.0);
        assert!(rep.slack_ratio.is_infinite());
    }

    #[test]
    fn single_layer_recursion_is_operator_norm_inequality() {
        let net = Network::feedforward(vec![Matrix::from_rows(&[&[2.0, 1.0], &[0.0, 1.0]])]).unwrap();
        let u = LayerPerturbation {
            deltas: vec![Matrix::from_rows(&[&[0.5, -0.5], &[0.25, 0.0]])],
        };
        let r = verify_layer_recursion(&net, &[1.0, 1.0], &u).unwrap();
        assert!(r.pass);
        let un = u.spectral_norms().unwrap()[0];
        assert!((r.bound_value - 2.0 * un * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn margin_check_requires_norm_bound() {
        let net = net2();
        let zero = LayerPerturbation::zeros_like(&net);
        assert!(verify_margin_perturbation(&net, &[3.0, 0.0], &zero, 0, 1, 1.0).is_err());
    }

    #[test]
    fn robust_check_at_zero_epsilon_equals_plain_check() {
        let mut r = rng::stream(2, "t", &[]);
        let net = random_network(&mut r, SMALL);
        let x = random_input(&mut r, net.input_dim());
        let u = random_lemma_perturbation(&net, &mut r).unwrap();
        let b = norm2(&x);
        let plain = verify_margin_perturbation(&net, &x, &u, 0, 1, b).unwrap();
        let robust = verify_robust_margin_perturbation(&net, &x, &u, 0, 1, b, 0.0, GridParams::default()).unwrap();
        assert_eq!(plain.measured_gap, robust.measured_gap);
        assert_eq!(plain.bound_value, robust.bound_value);
        assert_eq!(robust.oracle_error_bound, 0.0);
    }

    #[test]
    fn endpoint_identical_functions() {
        let net = net2();
        let r = verify_endpoint_inequality(&net, &net, &[0.2, 0.3], 0.2, 0, 1, GridParams::default()).unwrap();
        assert_eq!((r.measured_gap, r.bound_value), (0.0, 0.0));
        assert!(r.pass);
    }

    #[test]
    fn tail_degenerate_cases() {
        let s = verify_gaussian_tail(4, 0.0, &[0.5, 1.0], MIN_TAIL_DRAWS, 3).unwrap();
        assert_eq!(s.violations, 0);
        let s = verify_gaussian_tail(2, 1.0, &[0.0], MIN_TAIL_DRAWS, 3).unwrap();
        assert_eq!(s.violations, 0);
        assert!(verify_gaussian_tail(2, 1.0, &[0.0], 100, 3).is_err());
    }

    #[test]
    fn homogeneity_single_layer_is_identity() {
        let net = Network::feedforward(vec![Matrix::from_rows(&[&[1.0, 2.0], &[0.0, -1.0]])]).unwrap();
        assert_eq!(net.beta_normalize().unwrap(), net);
        let s = verify_homogeneity(&net, &[vec![1.0, 1.0], vec![-0.5, 2.0]]).unwrap();
        assert_eq!(s.violations, 0);
        assert_eq!(s.trials, 3);
    }

    #[test]
    fn summary_accounting() {
        let reports = vec![
            TrialReport::new(0, 1.0, 2.0, 0.0),
            TrialReport::new(1, 2.0, 1.0, 0.0),
            TrialReport::new(2, 1.5, 1.0, 1.0),
            TrialReport::new(3, 0.0, 1.0, 0.0),
        ];
        let s = SuiteSummary::from_trials("x", &reports);
        assert_eq!(s.violations, 1);
        assert_eq!(s.inconclusive, 1);
        assert_eq!(s.min_slack, 0.5);
        assert_eq!(s.histogram, vec![2, 0, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn recursion_bounds_grow_with_depth_for_expanding_layers() {
        let net = Network::feedforward(vec![
            Matrix::diag(&[1.5, 1.0]),
            Matrix::diag(&[2.0, 1.0]),
            Matrix::diag(&[1.0, 1.2]),
        ])
        .unwrap();
        let mut r = rng::stream(5, "t", &[]);
        let u = random_lemma_perturbation(&net, &mut r).unwrap();
        let profile = layer_recursion_profile(&net, &[0.3, 0.9], &u).unwrap();
        for w in profile.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn suites_are_deterministic() {
        let cfg = SuiteConfig { resolution: 9, ..SuiteConfig::default() };
        for suite in [Suite::Margin, Suite::Endpoint] {
            let a = run_suite(suite, 20, 4, &cfg).unwrap();
            let b = run_suite(suite, 20, 4, &cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.violations, 0);
        }
        assert!(run_suite(Suite::Margin, 0, 4, &cfg).is_err());
    }
}
