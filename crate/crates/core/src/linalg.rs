//! Dense real matrices and the two norms the bounds consume.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Above this size the Gram matrix is not formed and the norm falls back to
/// matrix-free power iteration.
const DENSE_GRAM_LIMIT: usize = 128;

/// Squarings beyond this change nothing in double precision.
const MAX_SQUARINGS: usize = 64;

/// Dense row-major matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::usage(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!(
                "matrix entry ({}, {}) is not finite",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from row slices. Panics on ragged or empty input; meant for
    /// literals in examples and tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Matrix::new(rows.len(), cols, data).expect("invalid matrix literal")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::diag(&vec![1.0; n])
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Matrix with i.i.d. standard normal entries times `scale`.
    pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut rng::StreamRng) -> Self {
        let data = (0..rows * cols).map(|_| scale * rng::normal(rng)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `W v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `Wᵀ v`
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * vr;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn try_add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::usage(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// `a bᵀ`
    pub fn outer(a: &[f64], b: &[f64]) -> Matrix {
        let mut out = Matrix::zeros(a.len(), b.len());
        for (r, &ar) in a.iter().enumerate() {
            for (c, &bc) in b.iter().enumerate() {
                out.data[r * b.len() + c] = ar * bc;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    /// Spectral norm with the default tolerance and iteration budget.
    pub fn spectral_norm(&self) -> Result<f64> {
        spectral_norm(self, DEFAULT_TOL, DEFAULT_MAX_ITER)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn frobenius_norm(w: &Matrix) -> f64 {
    w.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest singular value of `w`.
///
/// For matrices whose smaller side is at most 128 the Gram matrix `G` is
/// formed, normalized to unit trace, and raised to powers `2^s` by repeated
/// squaring. Each step yields a bracket
/// `vᵀGv <= λ_max(G) <= tr(G^N)^(1/N)`: the left side is a Rayleigh quotient
/// of the power-iterated vector, the right side holds because `G` is PSD.
/// Iteration stops once the bracket is within `tol` relative width, which
/// stays reliable when the top two singular values nearly coincide.
///
/// Larger matrices use matrix-free power iteration on `v ↦ Wᵀ(Wv)` with a
/// relative-change stopping rule.
///
/// Both paths start from the normalized all-ones vector and retry once from
/// a deterministic pseudo-random vector (stream `"spectral-restart"`).
pub fn spectral_norm(w: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::usage(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::usage("max_iter must be at least 1"));
    }
    if w.is_zero() {
        return Ok(0.0);
    }
    let n = w.rows.min(w.cols);
    let ones = vec![1.0 / (n as f64).sqrt(); n];
    let restart = restart_vector(n);
    if n <= DENSE_GRAM_LIMIT {
        let gram = gram_matrix(w);
        let trace: f64 = (0..n).map(|i| gram.get(i, i)).sum();
        let g0 = gram.scale(1.0 / trace);
        let first = bracket_top_eigenvalue(&g0, ones, tol, max_iter);
        let best = match first {
            Ok(lambda) => lambda,
            Err(_) => bracket_top_eigenvalue(&g0, restart, tol, max_iter).map_err(|s| {
                Error::NoConvergence {
                    estimate: (s.lower * trace).sqrt(),
                    residual: s.width,
                }
            })?,
        };
        Ok((best * trace).sqrt())
    } else {
        let first = operator_power_iteration(w, ones, tol, max_iter);
        match first {
            Ok(lambda) => Ok(lambda.sqrt()),
            Err(_) => operator_power_iteration(w, restart, tol, max_iter)
                .map(f64::sqrt)
                .map_err(|s| Error::NoConvergence {
                    estimate: s.lower.sqrt(),
                    residual: s.width,
                }),
        }
    }
}

struct Stalled {
    lower: f64,
    width: f64,
}

fn restart_vector(n: usize) -> Vec<f64> {
    let mut rng = rng::stream(0, "spectral-restart", &[n as u64]);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let len = norm2(&v);
    v.iter_mut().for_each(|x| *x /= len);
    v
}

/// Gram matrix on the smaller side: `WᵀW` when cols <= rows, else `WWᵀ`.
fn gram_matrix(w: &Matrix) -> Matrix {
    if w.cols <= w.rows {
        let mut g = Matrix::zeros(w.cols, w.cols);
        for r in 0..w.rows {
            let row = w.row(r);
            for i in 0..w.cols {
                let a = row[i];
                if a == 0.0 {
                    continue;
                }
                let out = &mut g.data[i * w.cols..(i + 1) * w.cols];
                for (o, &b) in out[i..].iter_mut().zip(&row[i..]) {
                    *o += a * b;
                }
            }
        }
        symmetrize_upper(&mut g);
        g
    } else {
        let mut g = Matrix::zeros(w.rows, w.rows);
        for i in 0..w.rows {
            for j in i..w.rows {
                g.data[i * w.rows + j] = dot(w.row(i), w.row(j));
            }
        }
        symmetrize_upper(&mut g);
        g
    }
}

fn symmetrize_upper(g: &mut Matrix) {
    let n = g.rows;
    for i in 0..n {
        for j in 0..i {
            g.data[i * n + j] = g.data[j * n + i];
        }
    }
}

/// Top eigenvalue of a unit-trace PSD matrix, bracketed by a Rayleigh
/// quotient from below and a trace-power bound from above.
fn bracket_top_eigenvalue(
    g0: &Matrix,
    mut v: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<f64, Stalled> {
    let mut power = g0.clone();
    // ln(upper bound); tr(g0) = 1 so the initial bound is 1.
    let mut log_upper = 0.0_f64;
    let mut exponent = 1.0_f64;
    let mut lower = dot(&v, &g0.matvec(&v));
    for _ in 0..max_iter.min(MAX_SQUARINGS) {
        let next = power.matvec(&v);
        let len = norm2(&next);
        if len > 0.0 && len.is_finite() {
            v = next.into_iter().map(|x| x / len).collect();
            lower = lower.max(dot(&v, &g0.matvec(&v)));
        }
        let upper = log_upper.exp();
        if upper - lower <= tol * lower {
            return Ok(lower.max(0.0));
        }
        let mut squared = power.matmul(&power);
        symmetrize_upper(&mut squared);
        let t: f64 = (0..squared.rows).map(|i| squared.get(i, i)).sum();
        if !(t > 0.0) {
            break;
        }
        squared.data.iter_mut().for_each(|x| *x /= t);
        exponent *= 2.0;
        log_upper += t.ln() / exponent;
        power = squared;
    }
    Err(Stalled {
        lower,
        width: (log_upper.exp() - lower) / lower.max(f64::MIN_POSITIVE),
    })
}

/// Power iteration on `v ↦ Wᵀ(Wv)`; returns the top eigenvalue of `WᵀW`.
fn operator_power_iteration(
    w: &Matrix,
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<f64, Stalled> {
    // Work on the smaller side so `start` has the right length.
    let transposed;
    let op = if w.cols <= w.rows {
        w
    } else {
        transposed = w.transpose();
        &transposed
    };
    let mut v = start;
    let mut prev = norm2(&op.matvec(&v)).powi(2);
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let next = op.matvec_t(&op.matvec(&v));
        let len = norm2(&next);
        if len == 0.0 {
            break;
        }
        v = next.into_iter().map(|x| x / len).collect();
        let lambda = norm2(&op.matvec(&v)).powi(2);
        change = (lambda - prev).abs() / lambda;
        if change <= tol {
            return Ok(lambda);
        }
        prev = lambda;
    }
    Err(Stalled {
        lower: prev,
        width: change,
    })
}
