//! Margin operators, the robust margin (inner minimization over an attack
//! ball), and empirical margin losses.
//!
//! `RM(f(x), ·) = inf_{‖x' - x‖ <= ε} M(f(x'), ·)` is estimated three ways:
//! the exact closed form for single-layer nets, projected gradient descent,
//! and a brute-force grid for inputs of dimension at most 3. The last two
//! only ever return values attained at a feasible point, so they upper-bound
//! the infimum.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{norm2, sub};
use crate::network::Network;
use crate::rng;

/// Norm order `p` of the attack ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOrder {
    L1,
    L2,
    Inf,
}

impl NormOrder {
    /// `1/p` with `1/∞ = 0`.
    pub fn reciprocal(self) -> f64 {
        match self {
            NormOrder::L1 => 1.0,
            NormOrder::L2 => 0.5,
            NormOrder::Inf => 0.0,
        }
    }

    pub fn dual(self) -> NormOrder {
        match self {
            NormOrder::L1 => NormOrder::Inf,
            NormOrder::L2 => NormOrder::L2,
            NormOrder::Inf => NormOrder::L1,
        }
    }

    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormOrder::L1 => v.iter().map(|x| x.abs()).sum(),
            NormOrder::L2 => norm2(v),
            NormOrder::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormOrder::L1 => "1",
            NormOrder::L2 => "2",
            NormOrder::Inf => "inf",
        }
    }

    /// Project `point` onto the `eps`-ball around `center`.
    pub fn project(self, center: &[f64], eps: f64, point: &[f64]) -> Vec<f64> {
        let delta = sub(point, center);
        let projected = match self {
            NormOrder::L2 => {
                let len = norm2(&delta);
                if len <= eps {
                    delta
                } else {
                    delta.iter().map(|d| d * eps / len).collect()
                }
            }
            NormOrder::Inf => delta.iter().map(|d| d.clamp(-eps, eps)).collect(),
            NormOrder::L1 => project_l1(&delta, eps),
        };
        center.iter().zip(&projected).map(|(c, d)| c + d).collect()
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "l1" => Ok(NormOrder::L1),
            "2" | "l2" => Ok(NormOrder::L2),
            "inf" | "linf" | "∞" => Ok(NormOrder::Inf),
            other => Err(Error::usage(format!("unknown norm order {other:?}; use 1, 2 or inf"))),
        }
    }
}

/// Euclidean projection onto the ℓ₁ ball of radius `eps` (sorted-simplex method).
fn project_l1(v: &[f64], eps: f64) -> Vec<f64> {
    if v.iter().map(|x| x.abs()).sum::<f64>() <= eps {
        return v.to_vec();
    }
    if eps == 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in mags.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - eps) / (i + 1) as f64;
        if u > t {
            theta = t;
        } else {
            break;
        }
    }
    v.iter()
        .map(|x| x.signum() * (x.abs() - theta).max(0.0))
        .collect()
}

/// `logits[i] - logits[j]`.
pub fn margin_pair(logits: &[f64], i: usize, j: usize) -> Result<f64> {
    let k = logits.len();
    if i >= k || j >= k {
        return Err(Error::usage(format!("class index ({i}, {j}) out of range for {k} classes")));
    }
    Ok(logits[i] - logits[j])
}

/// Index of the largest logit other than `y`; ties go to the smallest index.
pub fn runner_up(logits: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in logits.iter().enumerate() {
        if j != y && (best == usize::MAX || v > logits[best]) {
            best = j;
        }
    }
    best
}

/// `logits[y] - max_{j != y} logits[j]`.
pub fn margin_label(logits: &[f64], y: usize) -> Result<f64> {
    let k = logits.len();
    if k < 2 {
        return Err(Error::usage("label margin needs at least 2 classes"));
    }
    if y >= k {
        return Err(Error::usage(format!("label {y} out of range for {k} classes")));
    }
    Ok(logits[y] - logits[runner_up(logits, y)])
}

/// Which margin is being minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Pair(usize, usize),
    Label(usize),
}

impl Objective {
    pub fn evaluate(self, logits: &[f64]) -> Result<f64> {
        match self {
            Objective::Pair(i, j) => margin_pair(logits, i, j),
            Objective::Label(y) => margin_label(logits, y),
        }
    }

    /// Direction `s` with `∇M = sᵀ ∂f`, at the given logits.
    fn seed(self, logits: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; logits.len()];
        let (a, b) = match self {
            Objective::Pair(i, j) => (i, j),
            Objective::Label(y) => (y, runner_up(logits, y)),
        };
        s[a] += 1.0;
        s[b] -= 1.0;
        s
    }

    fn check(self, k: usize) -> Result<()> {
        match self {
            Objective::Pair(i, j) if i < k && j < k => Ok(()),
            Objective::Label(y) if y < k && k >= 2 => Ok(()),
            _ => Err(Error::usage(format!("objective {self:?} invalid for {k} classes"))),
        }
    }
}

/// Parameters of a projected-gradient attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub p: NormOrder,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl AttackSpec {
    /// Evaluation-strength attack: 40 steps of size `2.5ε/40`, 10 restarts.
    pub fn new(p: NormOrder, epsilon: f64) -> Self {
        AttackSpec {
            p,
            epsilon,
            steps: 40,
            step_size: step_size_for(epsilon, 40),
            restarts: 10,
            seed: 0,
        }
    }

    /// Cheap attack used inside adversarial training: 10 steps, 1 restart.
    pub fn training(p: NormOrder, epsilon: f64) -> Self {
        AttackSpec {
            steps: 10,
            step_size: step_size_for(epsilon, 10),
            restarts: 1,
            ..AttackSpec::new(p, epsilon)
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        AttackSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::usage(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::usage(format!("step size must be > 0, got {}", self.step_size)));
        }
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::usage("steps and restarts must be at least 1"));
        }
        Ok(())
    }
}

fn step_size_for(epsilon: f64, steps: usize) -> f64 {
    let s = 2.5 * epsilon / steps as f64;
    // keep the attack parameters valid at ε = 0; the ball is a point so the size is moot
    if s > 0.0 {
        s
    } else {
        f64::MIN_POSITIVE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginMethod {
    ExactLinear,
    Pgd,
    BruteForce,
}

impl MarginMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MarginMethod::ExactLinear => "exact_linear",
            MarginMethod::Pgd => "pgd",
            MarginMethod::BruteForce => "brute_force",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginResult {
    pub value: f64,
    /// Feasible point attaining `value`.
    pub witness: Vec<f64>,
    pub method: MarginMethod,
    /// Upper bound on `value - inf` for brute force; 0 for the exact path.
    /// `None` for PGD, which carries no such guarantee.
    pub gap_bound: Option<f64>,
}

fn check_query(net: &Network, x: &[f64], objective: Objective) -> Result<()> {
    if x.len() != net.input_dim() {
        return Err(Error::usage(format!(
            "input has dimension {}, network expects {}",
            x.len(),
            net.input_dim()
        )));
    }
    objective.check(net.output_dim())
}

/// Closed-form robust margin of a single-layer network.
///
/// For `a = w_i - w_j` the infimum of `aᵀx'` over the `p`-ball is
/// `aᵀx - ε‖a‖_q` with `q` dual to `p`; the label objective is the minimum
/// of this over the wrong classes.
pub fn exact_linear_margin(
    net: &Network,
    x: &[f64],
    objective: Objective,
    p: NormOrder,
    epsilon: f64,
) -> Result<MarginResult> {
    check_query(net, x, objective)?;
    if net.depth() != 1 {
        return Err(Error::usage("exact robust margin needs a single-layer network"));
    }
    let w = &net.layers()[0];
    let logits = w.matvec(x);
    let pairs: Vec<(usize, usize)> = match objective {
        Objective::Pair(i, j) => vec![(i, j)],
        Objective::Label(y) => (0..logits.len()).filter(|&j| j != y).map(|j| (y, j)).collect(),
    };
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, j) in pairs {
        let a = sub(w.row(i), w.row(j));
        let value = (logits[i] - logits[j]) - epsilon * p.dual().norm(&a);
        if best.is_none_or(|(v, _, _)| value < v) {
            best = Some((value, i, j));
        }
    }
    let (value, i, j) = best.expect("at least one pair");
    let a = sub(w.row(i), w.row(j));
    let witness = steepest_point(x, &a, p, epsilon);
    Ok(MarginResult {
        value,
        witness,
        method: MarginMethod::ExactLinear,
        gap_bound: Some(0.0),
    })
}

/// `argmin_{‖x' - x‖_p <= ε} aᵀx'`.
fn steepest_point(x: &[f64], a: &[f64], p: NormOrder, eps: f64) -> Vec<f64> {
    let dir = descent_direction(a, p);
    x.iter().zip(&dir).map(|(xi, d)| xi + eps * d).collect()
}

/// Unit-`p`-norm direction minimizing `aᵀd` (zero when `a = 0`).
fn descent_direction(a: &[f64], p: NormOrder) -> Vec<f64> {
    match p {
        NormOrder::L2 => {
            let len = norm2(a);
            if len == 0.0 {
                vec![0.0; a.len()]
            } else {
                a.iter().map(|v| -v / len).collect()
            }
        }
        NormOrder::Inf => a
            .iter()
            .map(|v| if *v == 0.0 { 0.0 } else { -v.signum() })
            .collect(),
        NormOrder::L1 => {
            let mut d = vec![0.0; a.len()];
            let (idx, mag) = a
                .iter()
                .enumerate()
                .fold((0, 0.0), |(bi, bm), (i, v)| if v.abs() > bm { (i, v.abs()) } else { (bi, bm) });
            if mag > 0.0 {
                d[idx] = -a[idx].signum();
            }
            d
        }
    }
}

/// Random point of the `p`-ball of radius `eps` around `center`.
fn random_feasible(center: &[f64], p: NormOrder, eps: f64, rng: &mut rng::StreamRng) -> Vec<f64> {
    use rand::Rng;
    let n = center.len();
    let delta: Vec<f64> = match p {
        NormOrder::Inf => (0..n).map(|_| eps * (2.0 * rng.random::<f64>() - 1.0)).collect(),
        NormOrder::L2 | NormOrder::L1 => {
            let g = rng::normal_vec(rng, n);
            let len = p.norm(&g);
            let radius = eps * rng.random::<f64>().powf(1.0 / n as f64);
            if len == 0.0 {
                vec![0.0; n]
            } else {
                g.iter().map(|v| v * radius / len).collect()
            }
        }
    };
    // projection only guards against rounding at the boundary
    p.project(center, eps, &center.iter().zip(&delta).map(|(c, d)| c + d).collect::<Vec<_>>())
}

/// Projected gradient descent on the margin objective over the `p`-ball.
///
/// Restart 0 starts at `x`; later restarts start at random feasible points
/// drawn from stream `("pgd-restart", [restart])` of `spec.seed`. The best
/// point visited over all restarts and steps is returned.
pub fn pgd_minimize_margin(
    net: &Network,
    x: &[f64],
    objective: Objective,
    spec: &AttackSpec,
) -> Result<MarginResult> {
    check_query(net, x, objective)?;
    spec.validate()?;
    let eps = spec.epsilon;
    let clean = objective.evaluate(&net.forward_unchecked(x))?;
    let mut best_value = clean;
    let mut best_point = x.to_vec();
    if eps > 0.0 {
        for restart in 0..spec.restarts {
            let mut point = if restart == 0 {
                x.to_vec()
            } else {
                let mut r = rng::stream(spec.seed, "pgd-restart", &[restart as u64]);
                random_feasible(x, spec.p, eps, &mut r)
            };
            for step in 0..=spec.steps {
                let logits = net.forward_unchecked(&point);
                let value = objective.evaluate(&logits)?;
                if value < best_value {
                    best_value = value;
                    best_point = point.clone();
                }
                if step == spec.steps {
                    break;
                }
                let grad = net.input_gradient(&point, &objective.seed(&logits))?;
                let dir = descent_direction(&grad, spec.p);
                if dir.iter().all(|&d| d == 0.0) {
                    break;
                }
                let moved: Vec<f64> = point
                    .iter()
                    .zip(&dir)
                    .map(|(a, d)| a + spec.step_size * d)
                    .collect();
                point = spec.p.project(x, eps, &moved);
            }
        }
    }
    Ok(MarginResult {
        value: best_value,
        witness: best_point,
        method: MarginMethod::Pgd,
        gap_bound: None,
    })
}

/// Parameters of the grid oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridParams {
    pub resolution: usize,
    pub extra_samples: usize,
    pub seed: u64,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            resolution: 41,
            extra_samples: 64,
            seed: 0,
        }
    }
}

/// Upper bound on the ℓ₂ Lipschitz constant of `x ↦ M(f_w(x), ·)`.
///
/// Both margin objectives depend on two distinct logit coordinates, each
/// 1-Lipschitz in `f`, so the constant is `√2` times that of `f`.
pub fn margin_input_lipschitz(net: &Network) -> Result<f64> {
    Ok(std::f64::consts::SQRT_2 * net.input_lipschitz()?)
}

/// Every point the grid oracle evaluates: the center, a `resolution^n` grid
/// on the bounding cube with outside points projected radially onto the
/// ℓ₂ ball, and `extra_samples` random interior points.
///
/// Projection is nonexpansive, so every ball point lies within
/// `ε√n / (resolution - 1)` of some candidate.
pub fn grid_candidates(x: &[f64], epsilon: f64, params: GridParams) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    if n > 3 {
        return Err(Error::usage(format!(
            "brute-force oracle supports input dimension <= 3, got {n}"
        )));
    }
    if params.resolution < 3 {
        return Err(Error::usage("grid resolution must be at least 3"));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::usage(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let res = params.resolution;
    let mut points = Vec::with_capacity(res.pow(n as u32) + params.extra_samples + 1);
    points.push(x.to_vec());
    if epsilon == 0.0 {
        return Ok(points);
    }
    let spacing = 2.0 * epsilon / (res - 1) as f64;
    let mut idx = vec![0usize; n];
    'grid: loop {
        let candidate: Vec<f64> = x
            .iter()
            .zip(&idx)
            .map(|(c, &i)| c - epsilon + spacing * i as f64)
            .collect();
        points.push(NormOrder::L2.project(x, epsilon, &candidate));
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < res {
                continue 'grid;
            }
            *slot = 0;
        }
        break;
    }
    let mut r = rng::stream(params.seed, "grid-extra", &[]);
    for _ in 0..params.extra_samples {
        points.push(random_feasible(x, NormOrder::L2, epsilon, &mut r));
    }
    Ok(points)
}

/// Covering radius of [`grid_candidates`] in input space.
pub fn grid_covering_radius(n: usize, epsilon: f64, resolution: usize) -> f64 {
    epsilon * (n as f64).sqrt() / (resolution - 1) as f64
}

/// Minimum of the objective over [`grid_candidates`] in the ℓ₂ ball.
///
/// The result upper-bounds the true infimum and exceeds it by at most
/// `gap_bound = L · ε√n / (resolution - 1)`, with `L` from
/// [`margin_input_lipschitz`].
pub fn brute_force_robust_margin(
    net: &Network,
    x: &[f64],
    objective: Objective,
    epsilon: f64,
    params: GridParams,
) -> Result<MarginResult> {
    check_query(net, x, objective)?;
    let mut points = grid_candidates(x, epsilon, params)?;
    let mut best_value = f64::INFINITY;
    let mut best_idx = 0;
    for (i, point) in points.iter().enumerate() {
        let value = objective.evaluate(&net.forward_unchecked(point))?;
        if value < best_value {
            best_value = value;
            best_idx = i;
        }
    }
    let gap_bound = if epsilon == 0.0 {
        0.0
    } else {
        margin_input_lipschitz(net)? * grid_covering_radius(x.len(), epsilon, params.resolution)
    };
    Ok(MarginResult {
        value: best_value,
        witness: points.swap_remove(best_idx),
        method: MarginMethod::BruteForce,
        gap_bound: Some(gap_bound),
    })
}

/// How [`robust_margin`] evaluates the infimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustMethod {
    /// Exact for single-layer nets, PGD otherwise.
    Auto,
    ExactLinear,
    Pgd,
    BruteForce(GridParams),
}

/// Robust margin operator `RM` over the `spec.p` ball of radius `spec.epsilon`.
pub fn robust_margin(
    net: &Network,
    x: &[f64],
    objective: Objective,
    spec: &AttackSpec,
    method: RobustMethod,
) -> Result<MarginResult> {
    spec.validate()?;
    match method {
        RobustMethod::Auto if net.depth() == 1 => {
            exact_linear_margin(net, x, objective, spec.p, spec.epsilon)
        }
        RobustMethod::Auto | RobustMethod::Pgd => pgd_minimize_margin(net, x, objective, spec),
        RobustMethod::ExactLinear => exact_linear_margin(net, x, objective, spec.p, spec.epsilon),
        RobustMethod::BruteForce(params) => {
            if spec.p != NormOrder::L2 {
                return Err(Error::usage("brute-force oracle supports the l2 ball only"));
            }
            brute_force_robust_margin(net, x, objective, spec.epsilon, params)
        }
    }
}

/// Clean and attacked label margins of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMargins {
    pub clean: f64,
    pub robust: Option<f64>,
    pub method: Option<MarginMethod>,
}

/// Attack seed for sample `index`, so every sample draws from its own stream.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    use rand::RngCore;
    rng::stream(seed, "sample", &[index as u64]).next_u64()
}

/// Per-sample margins; the robust column is present when `attack` is given.
pub fn sample_margins(
    net: &Network,
    data: &Dataset,
    attack: Option<&AttackSpec>,
) -> Result<Vec<SampleMargins>> {
    if data.n() != net.input_dim() || data.k() > net.output_dim() {
        return Err(Error::usage(format!(
            "dataset (n = {}, k = {}) does not match network ({} -> {})",
            data.n(),
            data.k(),
            net.input_dim(),
            net.output_dim()
        )));
    }
    data.samples()
        .par_iter()
        .enumerate()
        .map(|(idx, s)| {
            let clean = margin_label(&net.forward_unchecked(&s.x), s.y)?;
            let (robust, method) = match attack {
                None => (None, None),
                Some(spec) => {
                    let spec = spec.with_seed(sample_seed(spec.seed, idx));
                    let r = robust_margin(net, &s.x, Objective::Label(s.y), &spec, RobustMethod::Auto)?;
                    // the clean point is feasible
                    (Some(r.value.min(clean)), Some(r.method))
                }
            };
            Ok(SampleMargins {
                clean,
                robust,
                method,
            })
        })
        .collect()
}

/// Median with the even-count convention `(a + b) / 2`; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLosses {
    /// Fraction of samples with label margin `<= γ`.
    pub clean_loss: f64,
    /// Fraction of samples where the attack found a point with margin `<= γ`.
    /// The search can miss adversarial points, so this is a lower bound on
    /// the empirical robust margin loss.
    pub robust_loss: Option<f64>,
}

pub fn empirical_losses(
    net: &Network,
    data: &Dataset,
    gamma: f64,
    attack: Option<&AttackSpec>,
) -> Result<EmpiricalLosses> {
    if !(gamma >= 0.0) {
        return Err(Error::usage(format!("gamma must be >= 0, got {gamma}")));
    }
    let margins = sample_margins(net, data, attack)?;
    Ok(losses_from_margins(&margins, gamma))
}

pub fn losses_from_margins(margins: &[SampleMargins], gamma: f64) -> EmpiricalLosses {
    let m = margins.len() as f64;
    let clean_loss = margins.iter().filter(|s| s.clean <= gamma).count() as f64 / m;
    let robust_loss = if margins.iter().all(|s| s.robust.is_some()) {
        Some(margins.iter().filter(|s| s.robust.is_some_and(|r| r <= gamma)).count() as f64 / m)
    } else {
        None
    };
    EmpiricalLosses {
        clean_loss,
        robust_loss,
    }
}
