//! Labeled datasets with a certified ℓ₂ norm bound, and a synthetic generator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// Samples with labels in `[0, k)` and every `|x|₂ <= b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    n: usize,
    k: usize,
    b: f64,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, n: usize, k: usize, b: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::usage("dataset is empty"));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::usage(format!("norm bound B must be positive, got {b}")));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != n {
                return Err(Error::usage(format!(
                    "sample {i} has dimension {}, expected {n}",
                    s.x.len()
                )));
            }
            if s.y >= k {
                return Err(Error::usage(format!(
                    "sample {i} has label {} outside [0, {k})",
                    s.y
                )));
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::usage(format!("sample {i} has a non-finite feature")));
            }
            let norm = norm2(&s.x);
            if norm > b {
                return Err(Error::usage(format!(
                    "sample {i} has norm {norm} exceeding B = {b}"
                )));
            }
        }
        Ok(Dataset { samples, n, k, b })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Input dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Class count.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Certified ℓ₂ norm bound `B`.
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn max_norm(&self) -> f64 {
        self.samples.iter().map(|s| norm2(&s.x)).fold(0.0, f64::max)
    }
}

/// Scale `x` so `|x|₂ <= b`, leaving it alone when already inside.
pub(crate) fn clamp_to_ball(x: &mut [f64], b: f64) {
    let norm = norm2(x);
    if norm <= b {
        return;
    }
    let s = b / norm;
    x.iter_mut().for_each(|v| *v *= s);
    // rounding can leave the norm one ulp above b
    while norm2(x) > b {
        x.iter_mut().for_each(|v| *v *= 1.0 - 1e-15);
    }
}

/// Centers with pairwise distance at least `separation`, or `None` if they
/// cannot fit inside the radius-`b` ball with this layout.
///
/// Layout: `±r e_a` along coordinate axes when `k <= 2n`, a regular polygon
/// in the first two coordinates otherwise, evenly spaced points when `n = 1`.
fn blob_centers(k: usize, n: usize, separation: f64, b: f64) -> Option<Vec<Vec<f64>>> {
    let mut centers = vec![vec![0.0; n]; k];
    let radius;
    if k <= 2 * n {
        radius = if k == 2 {
            separation / 2.0
        } else {
            separation / 2f64.sqrt()
        };
        for (c, center) in centers.iter_mut().enumerate() {
            let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
            center[c / 2] = sign * radius;
        }
    } else if n >= 2 {
        let angle = std::f64::consts::PI / k as f64;
        radius = separation / (2.0 * angle.sin());
        for (c, center) in centers.iter_mut().enumerate() {
            let t = 2.0 * angle * c as f64;
            center[0] = radius * t.cos();
            center[1] = radius * t.sin();
        }
    } else {
        radius = separation * (k - 1) as f64 / 2.0;
        for (c, center) in centers.iter_mut().enumerate() {
            center[0] = -radius + separation * c as f64;
        }
    }
    (radius <= b).then_some(centers)
}

/// `k` Gaussian clusters in `R^n` with per-coordinate spread
/// `separation / (8√n)`; see [`gen_blobs_with_spread`].
pub fn gen_blobs(k: usize, n: usize, m: usize, separation: f64, b: f64, seed: u64) -> Result<Dataset> {
    let spread = separation / (8.0 * (n.max(1) as f64).sqrt());
    gen_blobs_with_spread(k, n, m, separation, b, spread, seed)
}

/// Sample `i` has label `i mod k`, so class counts differ by at most one.
/// Points outside the `b`-ball are pulled radially onto it.
pub fn gen_blobs_with_spread(
    k: usize,
    n: usize,
    m: usize,
    separation: f64,
    b: f64,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::usage(format!("need at least 2 classes, got {k}")));
    }
    if n == 0 {
        return Err(Error::usage("input dimension must be positive"));
    }
    if m < k {
        return Err(Error::usage(format!("need m >= k, got m = {m}, k = {k}")));
    }
    if !(b > 0.0) || !(separation >= 0.0) || !(spread >= 0.0) {
        return Err(Error::usage("B must be positive, separation and spread nonnegative"));
    }
    let centers = blob_centers(k, n, separation, b).ok_or_else(|| {
        Error::usage(format!(
            "cannot place {k} centers {separation} apart inside a ball of radius {b}"
        ))
    })?;
    let mut r = rng::stream(seed, "blobs", &[]);
    let samples = (0..m)
        .map(|i| {
            let y = i % k;
            let mut x: Vec<f64> = centers[y]
                .iter()
                .map(|c| c + spread * rng::normal(&mut r))
                .collect();
            clamp_to_ball(&mut x, b);
            Sample { x, y }
        })
        .collect();
    Dataset::new(samples, n, k, b)
}

/// Deterministic shuffle of `0..len` for the given stream.
pub(crate) fn permutation(len: usize, rng: &mut rng::StreamRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
