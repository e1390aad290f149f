//! Oracles shared by the integration tests. Nothing here calls into the
//! library's numerics; they are independent reference computations.

#![allow(dead_code)]

use specbound::Matrix;

/// Largest root of `λ² - tλ + det` for a symmetric 2×2 matrix, with the
/// discriminant `t² - 4 det` written as `(a - d)² + 4bc` to avoid
/// cancellation.
pub fn top_eigenvalue_2x2(a: [[f64; 2]; 2]) -> f64 {
    let t = a[0][0] + a[1][1];
    let disc = ((a[0][0] - a[1][1]).powi(2) + 4.0 * a[0][1] * a[1][0]).max(0.0);
    0.5 * (t + disc.sqrt())
}

fn cubic(a: [[f64; 3]; 3], l: f64) -> (f64, f64) {
    // det(λI - A) = λ³ - c2 λ² + c1 λ - c0 and its derivative
    let c2 = a[0][0] + a[1][1] + a[2][2];
    let c1 = a[0][0] * a[1][1] + a[0][0] * a[2][2] + a[1][1] * a[2][2]
        - a[0][1] * a[1][0]
        - a[0][2] * a[2][0]
        - a[1][2] * a[2][1];
    let c0 = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    (
        ((l - c2) * l + c1) * l - c0,
        (3.0 * l - 2.0 * c2) * l + c1,
    )
}

/// Largest root of the characteristic polynomial of a symmetric 3×3 matrix:
/// trigonometric solution of the depressed cubic, then Newton polishing.
pub fn top_eigenvalue_3x3(a: [[f64; 3]; 3]) -> f64 {
    let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
    let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
    if p2 == 0.0 {
        return q;
    }
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (a[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let mut l = q + 2.0 * p * (r.acos() / 3.0).cos();
    for _ in 0..3 {
        let (f, df) = cubic(a, l);
        if df <= 0.0 {
            break;
        }
        let next = l - f / df;
        if cubic(a, next).0.abs() >= f.abs() {
            break;
        }
        l = next;
    }
    l
}

/// `‖W‖₂` for a matrix with at most 3 rows or columns, from the
/// characteristic polynomial of the smaller Gram matrix.
pub fn spectral_norm_oracle(w: &Matrix) -> f64 {
    let (r, c) = w.shape();
    let small = r.min(c);
    let gram = |i: usize, j: usize| -> f64 {
        if r <= c {
            (0..c).map(|k| w.get(i, k) * w.get(j, k)).sum()
        } else {
            (0..r).map(|k| w.get(k, i) * w.get(k, j)).sum()
        }
    };
    let lambda = match small {
        1 => gram(0, 0),
        2 => top_eigenvalue_2x2([[gram(0, 0), gram(0, 1)], [gram(1, 0), gram(1, 1)]]),
        3 => {
            let mut a = [[0.0; 3]; 3];
            for (i, row) in a.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = gram(i, j);
                }
            }
            top_eigenvalue_3x3(a)
        }
        _ => panic!("oracle needs min(rows, cols) <= 3"),
    };
    lambda.max(0.0).sqrt()
}

/// `√(Σ w_ij²)` by direct summation.
pub fn frobenius_oracle(w: &Matrix) -> f64 {
    w.data().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Reference forward pass written out independently of the library.
pub fn forward_oracle(layers: &[Matrix], resnet: bool, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, w) in layers.iter().enumerate() {
        let input: Vec<f64> = if i == 0 { h.clone() } else { h.iter().map(|v| v.max(0.0)).collect() };
        let mut z: Vec<f64> = (0..w.rows())
            .map(|r| (0..w.cols()).map(|c| w.get(r, c) * input[c]).sum())
            .collect();
        if resnet && i > 0 {
            z.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
        }
        h = z;
    }
    h
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
